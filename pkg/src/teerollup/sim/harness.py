"""Wires actors, the chain and the network together and runs a scenario."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable

from .. import tee
from ..chain import ChainCall, ChainLedger, Event, GasTable, Receipt
from ..config import ScenarioConfig
from ..contracts import DapParams, deploy
from ..core import PROGRAM_HASH, Metadata, genesis, verify_chain
from ..crypto import PublicKey, gen_keypair
from ..dap import DapNode
from ..merkle import AccountTree, MerkleProof, verify_proof
from ..adversary import apply_profile
from ..sequencer import SequencerNode
from .events import EventQueue
from .network import Message, NetworkModel
from .rng import Streams
from .trace import Tracer, load, loads
from .workload import Auditor, Client, generate_workload

CHAIN = "chain"


class InvariantBreach(Exception):
    """A runtime invariant failed; the trace up to that point is still written."""


def gas_table_for(cfg: ScenarioConfig) -> GasTable:
    table = GasTable(gas_price_gwei=Decimal(cfg.chain.gas_price_gwei), token_usd=Decimal(cfg.chain.token_usd))
    table.gas.update(cfg.chain.gas)
    table.__post_init__()
    return table


class ChainActor:
    """Collects calls and seals them into a block ``block_delay`` after the first arrives."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.pending: list[tuple[float, str, bytes, ChainCall, Callable | None]] = []
        self.block_at: float | None = None

    def on_message(self, msg: Message) -> None:
        call, cb = msg.payload
        self.pending.append((self.sim.now, msg.src, call.call_hash(), call, cb))
        if self.block_at is None:
            self.block_at = self.sim.now + self.sim.cfg.chain.block_delay
            self.sim.queue.schedule(self.block_at, self.seal)

    def seal(self) -> None:
        batch = sorted(self.pending, key=lambda p: (p[0], p[1], p[2]))
        self.pending = []
        self.block_at = None
        receipts = self.sim.ledger.produce_block([p[3] for p in batch], at=self.sim.now)
        for (_, src, _, _, cb), r in zip(batch, receipts):
            self.sim.record_receipt(src, r)
        for (_, _, _, _, cb), r in zip(batch, receipts):
            if cb is not None:
                cb(r)
            for ev in r.events:
                self.sim.publish(ev)


@dataclass
class RunResult:
    config: ScenarioConfig
    tracer: Tracer
    report: dict
    breach: str | None = None
    sim: "Simulation | None" = field(default=None, repr=False)

    def trace_text(self) -> str:
        return self.tracer.dumps()


class Simulation:
    def __init__(self, cfg: ScenarioConfig, archive_dir: Path | None = None):
        cfg.validate()
        self.cfg = cfg
        self.queue = EventQueue()
        self.streams = Streams(cfg.seed)
        self.gas_table = gas_table_for(cfg)
        self.ledger = ChainLedger(self.gas_table)
        d = cfg.dap
        params = DapParams(d.min_collateral, d.response_cost, d.surcharge, d.response_timeout)
        self.genesis = genesis(cfg.tree_depth)
        self.msc, self.tsc = deploy(
            self.ledger, cfg.committee.f, cfg.chain.challenge_timeout, cfg.chain.pledge_min, params, self.genesis
        )
        rtt, jitter = cfg.network.resolved()
        self.net = NetworkModel(self.queue, self.streams, rtt, jitter, cfg.network.bandwidth_mbps)
        self.chain = ChainActor(self)
        self.net.register(CHAIN, self.chain.on_message)
        self.tracer = Tracer({"scenario": cfg.to_dict(), "gas": dict(sorted(self.gas_table.gas.items())),
                              "gas_price_gwei": str(self.gas_table.gas_price_gwei),
                              "token_usd": str(self.gas_table.token_usd)})
        self.faucet_total = 0

        c = cfg.committee
        self.sequencers: list[SequencerNode] = []
        for i in range(c.n):
            platform = c.platforms[i % len(c.platforms)] if c.platforms else "sgx"
            enclave = tee.install(PROGRAM_HASH, self.streams.seed_bytes(f"enclave/{i}"), platform=platform)
            node = SequencerNode(i, enclave, self, AccountTree(cfg.tree_depth))
            self.sequencers.append(node)
            self.net.register(node.name, node.on_message)
        self.daps: list[DapNode] = []
        for j in range(d.m):
            archive = None if archive_dir is None else Path(archive_dir) / f"dap-{j}.jsonl"
            dap = DapNode(j, gen_keypair(self.streams.seed_bytes(f"dap/{j}")), self, archive)
            self.daps.append(dap)
            self.net.register(dap.name, dap.on_message)
        keys = [gen_keypair(self.streams.seed_bytes(f"client/{i}")) for i in range(cfg.workload.clients)]
        self.clients = [Client(i, k, self) for i, k in enumerate(keys)]
        self.client_by_addr: dict[PublicKey, Client] = {cl.address: cl for cl in self.clients}
        for cl in self.clients:
            self.net.register(cl.name, cl.on_message)
        self.auditor = Auditor(gen_keypair(self.streams.seed_bytes("auditor")), self, self.streams.get("auditor"))
        self.adversary = apply_profile(cfg.adversary, self.sequencers, self.daps, self.net, c.f)
        self.workload = generate_workload(cfg, self.streams.get("workload"), keys)
        self._names: dict[PublicKey, str] = {}

    # -- actor services ------------------------------------------------------
    @property
    def now(self) -> float:
        return self.queue.now

    def record(self, kind: str, **data) -> None:
        self.tracer.add(kind, self.now, **data)

    def send(self, kind: str, src: str, dst: str, payload, size: int) -> None:
        self.net.send(Message(kind, src, dst, payload, size))

    def submit(self, sender: str, call: ChainCall, callback: Callable[[Receipt], None] | None = None) -> None:
        size = self.cfg.network.msg_overhead_bytes * 4
        self.net.send(Message(call.method, sender, CHAIN, (call, callback), size))

    def publish(self, ev: Event) -> None:
        for node in self.sequencers:
            self.send(ev.name, CHAIN, node.name, ev, 512)
        for dap in self.daps:
            self.send(ev.name, CHAIN, dap.name, ev, 512)
        for cl in self.clients:
            cl.on_chain_event(ev)

    def exec_time(self, items: int) -> float:
        e = self.cfg.enclave
        return items * e.per_item_exec_us * e.tee_overhead / 1e6

    def vote_time(self, votes: int) -> float:
        return votes * self.cfg.enclave.vote_verify_us / 1e6

    def proposal_size(self, items: int) -> int:
        return self.cfg.network.msg_overhead_bytes + items * self.cfg.network.item_bytes

    def metadata_size(self, items: int, accounts: int) -> int:
        return self.proposal_size(items) + accounts * 80

    def fetch_metadata(self, height: int, state_hash: bytes | None) -> Metadata | None:
        for dap in self.daps:
            md = dap.store.get(height)
            if md is not None and (state_hash is None or md.state.digest() == state_hash):
                return md
        return None

    def query_nonce(self, addr: PublicKey) -> int | None:
        for dap in self.daps:
            n = dap.serve_nonce(addr)
            if n is not None:
                return n
        return None

    def query_proof(self, addr: PublicKey, height: int) -> tuple[int, MerkleProof] | None:
        root = self.tsc.states[height].account_root
        for dap in self.daps:
            served = dap.serve_balance_proof(addr, height)
            if served is not None and verify_proof(served[1], root):
                return served
        return None

    # -- trace -----------------------------------------------------------------
    def name_of(self, addr: PublicKey) -> str:
        return self._names.get(addr, addr.hex()[:16])

    def record_receipt(self, src: str, r: Receipt) -> None:
        data = {
            "sender": src,
            "method": r.call.method,
            "ok": r.ok,
            "code": r.code,
            "gas": r.gas_used,
            "height": r.height,
            "value": r.call.value,
        }
        if r.call.method == "UpdateState":
            a = r.call.args
            data.update(state=a["state"], digest=a["qc"].digest, locks=[list(x) for x in a["locks"]],
                        refunds=[list(x) for x in a["refunds"]],
                        voters=sorted({v.voter for v in a["qc"].votes}))
        if r.ok and isinstance(r.result, (int, bytes, str)) and not isinstance(r.result, bool):
            data["result"] = r.result
        if r.events:
            data["events"] = [{"name": e.name, **_event_data(e)} for e in r.events]
        self.tracer.add("receipt", self.now, **data)

    # -- setup and run -----------------------------------------------------------
    def _setup(self) -> None:
        cfg = self.cfg
        calls: list[ChainCall] = []
        for node in self.sequencers:
            self._fund(node.enclave.public_key, cfg.workload.native_funds)
            quote = tee.attest(node.enclave)
            calls.append(ChainCall(node.enclave.public_key, "Register",
                                   {"quote": quote, "pk": node.enclave.public_key, "seq_id": node.name}))
            self._names[node.enclave.public_key] = node.name
        for dap in self.daps:
            self._fund(dap.address, cfg.dap.collateral + cfg.workload.native_funds)
            calls.append(dap.register_call(cfg.dap.collateral))
            self._names[dap.address] = dap.name
        for cl in self.clients:
            self._fund(cl.address, cfg.workload.native_funds)
            self._names[cl.address] = cl.name
        self._fund(self.auditor.key.public_key, cfg.workload.native_funds)
        self._names[self.auditor.key.public_key] = self.auditor.name
        receipts = self.ledger.produce_block(calls, at=0.0)
        for r in receipts:
            if not r.ok:
                raise InvariantBreach(f"setup call {r.call.method} failed with {r.code}")
        self.record(
            "setup",
            sequencers={n.name: n.enclave.public_key for n in self.sequencers},
            profiles={n.name: n.profile.behavior for n in self.sequencers},
            compromised=[n.name for n in self.sequencers if n.profile.compromised],
            daps={d.name: d.address for d in self.daps},
            dap_profiles={d.name: d.profile.behavior for d in self.daps},
            clients={c.name: c.address for c in self.clients},
            faucet=self.faucet_total,
            genesis=self.genesis,
            setup_gas=sum(r.gas_used for r in receipts),
        )
        for node in self.sequencers:
            if node.profile.crash_at is not None:
                self.queue.schedule(node.profile.crash_at, self._crash, node)
        for ev in self.workload:
            self.queue.schedule(ev.time, self.clients[ev.client].handle, ev)
        self.auditor.start()

    def _fund(self, addr: PublicKey, amount: int) -> None:
        self.ledger.faucet(addr, amount)
        self.faucet_total += amount

    def _crash(self, node: SequencerNode) -> None:
        node.enclave.crashed = True
        self.record("crash", node=node.name)

    def run(self) -> RunResult:
        from .metrics import compute_report

        self._setup()
        breach = None
        try:
            self.queue.run(until=self.cfg.max_time)
            self.check_invariants()
        except InvariantBreach as exc:
            breach = str(exc)
        self.record("summary", **self.summary(), breach=breach)
        report = compute_report(loads(self.tracer.dumps()))
        return RunResult(self.cfg, self.tracer, report, breach, self)

    def summary(self) -> dict:
        t = self.tsc
        return {
            "contract_state": t.contract_state,
            "height": t.height,
            "latest": t.latest(),
            "escrow": t.escrow,
            "pledges": t.pledges,
            "forfeited": t.forfeited,
            "dap_pool": t.dap_pool,
            "slashed_pool": t.slashed_pool,
            "native_total": self.ledger.total_native(),
            "faucet_total": self.faucet_total,
            "open_challenges": len(t.challenges),
            "stuck": [n.name for n in self.sequencers if n.stuck],
            "dap_collateral": {self.name_of(a): acct.collateral for a, acct in sorted(t.daps.items())},
            "dap_heights": {d.name: sorted(d.store) for d in self.daps},
            "events_processed": self.queue.processed,
            "dropped": self.net.dropped,
        }

    def check_invariants(self) -> None:
        if self.ledger.total_native() != self.faucet_total:
            raise InvariantBreach("native token supply not conserved")
        states = [self.tsc.states[h] for h in range(self.tsc.height + 1)]
        if not verify_chain(states):
            raise InvariantBreach("accepted states do not form a hash chain")
        t = self.tsc
        if t.escrow < 0 or t.pledges < 0 or t.dap_pool < 0:
            raise InvariantBreach("negative contract pool")


def _event_data(e: Event) -> dict:
    d = dict(e.data)
    d.pop("qc", None)
    return d


def run_scenario(cfg: ScenarioConfig, trace_path: str | Path | None = None, archive_dir: Path | None = None) -> RunResult:
    """Run ``cfg`` to completion; optionally write the trace."""
    result = Simulation(cfg, archive_dir).run()
    if trace_path is not None:
        result.tracer.write(trace_path)
    return result


def replay(trace: str | Path | list[dict], seed: int | None = None) -> dict:
    """Recompute the report from a trace; the trace is authoritative, ``seed`` is ignored."""
    from .metrics import compute_report

    if isinstance(trace, list):
        records = trace
    elif isinstance(trace, Path) or (isinstance(trace, str) and "\n" not in trace):
        records = load(trace)
    else:
        records = loads(trace)
    return compute_report(records)
