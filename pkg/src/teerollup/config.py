"""Scenario configuration: dataclasses plus TOML/JSON loading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .adversary import DapProfile, LinkFilter, ProfileError, SequencerProfile, ThreatProfile


class ConfigError(ValueError):
    pass


NETWORK_PRESETS = {
    # one-way latency = rtt / 2
    "lan": {"rtt_ms": 0.5, "jitter_ms": 0.03},
    "wan": {"rtt_ms": 25.0, "jitter_ms": 0.1},
}


@dataclass
class CommitteeConfig:
    n: int = 10
    f: int = 3
    batch_size: int = 2000
    stagger: float = 2.0
    max_batch_wait: float = 2.0
    platforms: tuple[str, ...] = ("sgx", "tdx", "tdx", "csv", "csv")
    resolve_stagger: float = 1.0
    race_width: int = 1


@dataclass
class NetworkConfig:
    preset: str = "lan"
    rtt_ms: float | None = None
    jitter_ms: float | None = None
    bandwidth_mbps: float = 1000.0
    msg_overhead_bytes: int = 256
    item_bytes: int = 180

    def resolved(self) -> tuple[float, float]:
        if self.preset not in NETWORK_PRESETS:
            raise ConfigError(f"unknown network preset {self.preset!r}")
        p = NETWORK_PRESETS[self.preset]
        rtt = p["rtt_ms"] if self.rtt_ms is None else self.rtt_ms
        jit = p["jitter_ms"] if self.jitter_ms is None else self.jitter_ms
        return rtt, jit


@dataclass
class ChainConfig:
    block_delay: float = 12.0
    challenge_timeout: float = 4 * 3600.0
    pledge_min: int = 10
    gas_price_gwei: str = "19.26"
    token_usd: str = "3376.77"
    gas: dict[str, int] = field(default_factory=dict)


@dataclass
class EnclaveConfig:
    per_item_exec_us: float = 20.0
    tee_overhead: float = 1.2
    vote_verify_us: float = 60.0


@dataclass
class DapConfig:
    m: int = 3
    collateral: int = 100_000
    min_collateral: int = 100_000
    response_cost: int = 100
    surcharge: int = 1
    response_timeout: float = 600.0
    audits: int = 0
    audit_interval: float = 60.0
    sample_keys: int = 4
    storage_cost: int = 0


@dataclass
class WorkloadConfig:
    clients: int = 200
    deposit_value: int = 1000
    transfers: int = 3800
    redeems: int = 0
    transfer_start: float = 13.0
    rate: float = 10_000.0
    max_transfer_value: int = 10
    late_deposits: int = 0
    challenge_after: float | None = None
    direct_challenges: int = 0
    challenge_at: float = 30.0
    native_funds: int = 1_000_000


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    description: str = ""
    max_time: float = 600.0
    tree_depth: int = 32
    committee: CommitteeConfig = field(default_factory=CommitteeConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    enclave: EnclaveConfig = field(default_factory=EnclaveConfig)
    dap: DapConfig = field(default_factory=DapConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    adversary: ThreatProfile = field(default_factory=ThreatProfile)

    def validate(self) -> "ScenarioConfig":
        c = self.committee
        if c.n < 1 or c.f < 0 or c.n < c.f + 1:
            raise ConfigError("committee needs n >= f + 1 >= 1")
        if not 1 <= c.race_width <= c.n:
            raise ConfigError("race_width must be in 1..n")
        if c.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        self.network.resolved()
        if self.dap.m < 0 or self.dap.sample_keys < 1:
            raise ConfigError("bad DAP parameters")
        if self.dap.collateral < self.dap.min_collateral:
            raise ConfigError("DAP collateral below the minimum")
        w = self.workload
        if w.clients < 0 or w.transfers < 0 or w.redeems < 0 or w.rate < 0:
            raise ConfigError("workload counts must be non-negative")
        if (w.transfers or w.redeems) and w.clients < 1:
            raise ConfigError("transfers need clients")
        if not 1 <= self.tree_depth <= 64:
            raise ConfigError("tree_depth must be in 1..64")
        self.adversary.validate(c.n, c.f, self.dap.m)
        return self

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a table")
    data = dict(data)
    sections = {
        "committee": CommitteeConfig,
        "network": NetworkConfig,
        "chain": ChainConfig,
        "enclave": EnclaveConfig,
        "dap": DapConfig,
        "workload": WorkloadConfig,
    }
    kwargs: dict[str, Any] = {}
    try:
        for key, cls in sections.items():
            if key in data:
                kwargs[key] = _build(cls, data.pop(key), key)
        if "adversary" in data:
            kwargs["adversary"] = _threat_profile(data.pop("adversary"))
        cfg = _build(ScenarioConfig, data, "scenario")
    except (TypeError, AttributeError) as exc:
        raise ConfigError(str(exc)) from None
    for key, value in kwargs.items():
        setattr(cfg, key, value)
    if isinstance(cfg.committee.platforms, list):
        cfg.committee.platforms = tuple(cfg.committee.platforms)
    _check_types(cfg)
    try:
        return cfg.validate()
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None


def _threat_profile(data: dict) -> ThreatProfile:
    data = dict(data)
    seqs = tuple(_build(SequencerProfile, s, "adversary.sequencers") for s in data.pop("sequencers", []))
    daps = tuple(_build(DapProfile, d, "adversary.daps") for d in data.pop("daps", []))
    links = []
    for lf in data.pop("links", []):
        lf = dict(lf)
        if "kinds" in lf:
            lf["kinds"] = tuple(lf["kinds"])
        links.append(_build(LinkFilter, lf, "adversary.links"))
    prof = _build(ThreatProfile, data, "adversary")
    return ThreatProfile(sequencers=seqs, daps=daps, links=tuple(links), unsafe_exceed_f=prof.unsafe_exceed_f)


def _check_types(cfg: Any, where: str = "scenario") -> None:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            _check_types(v, f"{where}.{f.name}")
            continue
        t = str(f.type)
        if t in ("int",) and (not isinstance(v, int) or isinstance(v, bool)):
            raise ConfigError(f"{where}.{f.name}: expected an integer")
        if t == "float" and (not isinstance(v, (int, float)) or isinstance(v, bool)):
            raise ConfigError(f"{where}.{f.name}: expected a number")
        if t == "str" and not isinstance(v, str):
            raise ConfigError(f"{where}.{f.name}: expected a string")


def load(path: str | Path, seed: int | None = None, unsafe_exceed_f: bool = False) -> ScenarioConfig:
    """Read a scenario file; ``seed`` and ``unsafe_exceed_f`` override the file before validation."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario must be a table")
    if seed is not None:
        data["seed"] = seed
    if unsafe_exceed_f:
        data.setdefault("adversary", {})["unsafe_exceed_f"] = True
    return from_dict(data)


SCENARIO_DIR = Path(__file__).parent / "scenarios"


def canned() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def resolve(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = SCENARIO_DIR / f"{p.stem}.toml"
    if cand.exists():
        return cand
    raise ConfigError(f"no scenario file or canned scenario named {name_or_path!r}")
