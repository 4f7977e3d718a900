"""Static threat profiles and the forging adversary.

Four behaviours cover the threat cases: crash (host suspends the enclave),
I/O manipulation (network filters on the host's links), and full enclave
compromise (the adversary holds the enclave key and forges states).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fnmatch import fnmatch
from typing import TYPE_CHECKING

from .core import (
    BURN_ADDRESS,
    Batch,
    ExecutionInput,
    ExecutionOutput,
    IssueRecord,
    RollupState,
    SideEffects,
    Vote,
    execute,
    forge_vote,
)
from .crypto import KeyPair, hash
from .merkle import AccountTree
from . import tee

if TYPE_CHECKING:
    import numpy as np

BEHAVIOURS = ("honest", "censor", "forger", "silent")
DAP_BEHAVIOURS = ("diligent", "lazy", "garbage")
FORGE_STRATEGIES = ("inflate", "steal", "fake_refund", "forged_parent", "phantom_deposit")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class SequencerProfile:
    index: int
    behavior: str = "honest"
    compromised: bool = False
    crash_at: float | None = None
    withhold_metadata: bool = False
    forge_strategy: str = "random"


@dataclass(frozen=True)
class DapProfile:
    index: int
    behavior: str = "diligent"
    drop_prob: float = 1.0


@dataclass(frozen=True)
class LinkFilter:
    """Host-level manipulation of messages on links matching (src, dst) globs."""

    src: str = "*"
    dst: str = "*"
    drop: float = 0.0
    delay_ms: float = 0.0
    replay: bool = False
    kinds: tuple[str, ...] = ()

    def matches(self, src: str, dst: str, kind: str) -> bool:
        if not (fnmatch(src, self.src) and fnmatch(dst, self.dst)):
            return False
        return not self.kinds or kind in self.kinds


@dataclass(frozen=True)
class ThreatProfile:
    sequencers: tuple[SequencerProfile, ...] = ()
    daps: tuple[DapProfile, ...] = ()
    links: tuple[LinkFilter, ...] = ()
    unsafe_exceed_f: bool = False

    def compromised(self) -> list[int]:
        return sorted(p.index for p in self.sequencers if p.compromised)

    def validate(self, n: int, f: int, m: int) -> "ThreatProfile":
        seen = set()
        for p in self.sequencers:
            if not 0 <= p.index < n or p.index in seen:
                raise ProfileError(f"bad or duplicate sequencer index {p.index}")
            seen.add(p.index)
            if p.behavior not in BEHAVIOURS:
                raise ProfileError(f"unknown behaviour {p.behavior!r}")
            if p.behavior == "forger" and not p.compromised:
                raise ProfileError("forging requires a compromised enclave")
            if p.forge_strategy not in FORGE_STRATEGIES + ("random",):
                raise ProfileError(f"unknown forge strategy {p.forge_strategy!r}")
        seen = set()
        for d in self.daps:
            if not 0 <= d.index < m or d.index in seen:
                raise ProfileError(f"bad or duplicate DAP index {d.index}")
            seen.add(d.index)
            if d.behavior not in DAP_BEHAVIOURS:
                raise ProfileError(f"unknown DAP behaviour {d.behavior!r}")
            if not 0.0 <= d.drop_prob <= 1.0:
                raise ProfileError("drop_prob must be in [0, 1]")
        for lf in self.links:
            if not 0.0 <= lf.drop <= 1.0 or lf.delay_ms < 0:
                raise ProfileError("bad link filter")
        if len(self.compromised()) > f and not self.unsafe_exceed_f:
            raise ProfileError(
                f"{len(self.compromised())} compromised enclaves exceed f={f}; "
                "use --unsafe-exceed-f to explore the broken assumption"
            )
        return self

    def for_sequencer(self, i: int) -> SequencerProfile:
        for p in self.sequencers:
            if p.index == i:
                return p
        return SequencerProfile(i)

    def for_dap(self, i: int) -> DapProfile:
        for d in self.daps:
            if d.index == i:
                return d
        return DapProfile(i)

    def network_filters(self) -> tuple[LinkFilter, ...]:
        """Explicit link filters plus those implied by censoring sequencers."""
        out = list(self.links)
        for p in self.sequencers:
            if p.behavior == "censor":
                name = f"seq-{p.index}"
                out.append(LinkFilter(src="client-*", dst=name, drop=1.0))
                out.append(LinkFilter(src="chain", dst=name, drop=1.0, kinds=("Challenge",)))
        return tuple(out)


def apply_profile(profile: ThreatProfile, nodes, daps, network, f: int):
    """Install behaviours on already-built actors; returns the Adversary."""
    profile.validate(len(nodes), f, len(daps))
    adversary = Adversary()
    for node in nodes:
        p = profile.for_sequencer(node.index)
        node.profile = p
        node.enclave.compromised = p.compromised
        if p.compromised:
            adversary.keys[node.name] = tee.leak_secret(node.enclave)
    for dap in daps:
        dap.profile = profile.for_dap(dap.index)
    network.filters = profile.network_filters()
    return adversary


@dataclass
class Forgery:
    strategy: str
    output: ExecutionOutput
    batch: Batch


@dataclass
class Adversary:
    """Single coordinating adversary holding every leaked enclave key."""

    keys: dict[str, KeyPair] = field(default_factory=dict)

    @property
    def attacker(self) -> bytes:
        return hash(b"teerollup/attacker")

    def colluder_votes(self, digest: bytes) -> list[Vote]:
        return [forge_vote(k, digest) for _, k in sorted(self.keys.items())]

    def forge(self, strategy: str, inp: ExecutionInput, rng: "np.random.Generator") -> Forgery:
        if strategy == "random":
            strategy = FORGE_STRATEGIES[int(rng.integers(len(FORGE_STRATEGIES)))]
        honest = execute(inp)
        attacker = self.attacker
        if strategy == "inflate":
            tree = honest.tree.copy()
            tree.set_balance(attacker, tree.balance(attacker) + 1_000_000)
            out = _restate(honest, tree)
            return Forgery(strategy, out, inp.batch)
        if strategy == "steal":
            tree = honest.tree.copy()
            victims = sorted(((b, a) for a, b, _ in tree.items() if a not in (attacker, BURN_ADDRESS)), reverse=True)
            if victims:
                bal, victim = victims[0]
                tree.set_balance(victim, 0)
                tree.set_balance(attacker, tree.balance(attacker) + bal)
            else:
                tree.set_balance(attacker, 1)
            return Forgery(strategy, _restate(honest, tree), inp.batch)
        if strategy == "fake_refund":
            effects = SideEffects(honest.effects.locks, honest.effects.refunds + ((attacker, 1),))
            out = ExecutionOutput(honest.state, honest.tree, effects, honest.rejected)
            return Forgery(strategy, out, inp.batch)
        if strategy == "forged_parent":
            fake_tree = inp.prev_tree.copy()
            fake_tree.set_balance(attacker, fake_tree.balance(attacker) + 1_000_000)
            fake_parent = RollupState(
                inp.prev_state.height, hash(b"forged" + inp.prev_state.prev_hash), fake_tree.root(), inp.prev_state.txs_hash
            )
            out = execute(ExecutionInput(fake_parent, fake_tree, inp.batch, inp.deposits))
            return Forgery(strategy, out, inp.batch)
        if strategy == "phantom_deposit":
            fake_id = hash(b"phantom" + inp.prev_state.digest())
            batch = Batch(inp.batch.items + (IssueRecord(fake_id, attacker, 1_000_000),))
            deposits = dict(inp.deposits)
            deposits[fake_id] = (attacker, 1_000_000)
            out = execute(ExecutionInput(inp.prev_state, inp.prev_tree, batch, deposits))
            return Forgery(strategy, out, batch)
        raise ProfileError(f"unknown forge strategy {strategy!r}")


def _restate(honest: ExecutionOutput, tree: AccountTree) -> ExecutionOutput:
    s = honest.state
    return ExecutionOutput(RollupState(s.height, s.prev_hash, tree.root(), s.txs_hash), tree, honest.effects, honest.rejected)
