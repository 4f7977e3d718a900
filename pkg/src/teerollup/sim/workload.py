"""Client workload: deposits, transfers, redeems, challenges, withdrawals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ..chain import ChainCall, Event, Receipt
from ..config import ScenarioConfig
from ..contracts import ACTIVE, sign_withdraw
from ..core import BURN_ADDRESS, RollupTx
from ..crypto import KeyPair, PublicKey
from ..sequencer import CLIENT_REPLY, CLIENT_TX

if TYPE_CHECKING:
    from .harness import Simulation
    from .network import Message


@dataclass(frozen=True)
class ClientEvent:
    time: float
    kind: str  # deposit | transfer | redeem | challenge
    client: int
    value: int = 0
    tx: RollupTx | None = None


def generate_workload(cfg: ScenarioConfig, rng: np.random.Generator, keys: list[KeyPair]) -> list[ClientEvent]:
    """Reproducible client event stream; a zero rate yields no events at all."""
    w = cfg.workload
    if w.rate <= 0 or not keys:
        return []
    n = len(keys)
    events: list[ClientEvent] = [ClientEvent(0.0, "deposit", i, w.deposit_value) for i in range(n)]
    challengers = list(range(min(w.direct_challenges, n)))
    senders = [i for i in range(n) if i not in challengers]
    nonces = [0] * n
    ops = ["transfer"] * w.transfers + ["redeem"] * w.redeems
    if ops and senders:
        order = rng.permutation(len(ops))
        ops = [ops[i] for i in order]
        for k, kind in enumerate(ops):
            t = w.transfer_start + k / w.rate
            s = senders[int(rng.integers(len(senders)))]
            value = int(rng.integers(1, w.max_transfer_value + 1))
            if kind == "redeem" or n == 1:
                receiver = BURN_ADDRESS
            else:
                r = int(rng.integers(n - 1))
                receiver = keys[r if r < s else r + 1].public_key
            tx = RollupTx.create(keys[s], receiver, value, nonces[s])
            nonces[s] += 1
            events.append(ClientEvent(t, kind, s, value, tx))
    end = w.transfer_start + len(ops) / w.rate
    for _ in range(w.late_deposits):
        t = float(rng.uniform(w.transfer_start, end + 10.0))
        events.append(ClientEvent(t, "deposit", int(rng.integers(n)), w.deposit_value))
    for c in challengers:
        receiver = keys[(c + 1) % n].public_key
        tx = RollupTx.create(keys[c], receiver, 1, nonces[c])
        nonces[c] += 1
        events.append(ClientEvent(w.challenge_at, "challenge", c, 1, tx))
    events.sort(key=lambda e: (e.time, e.client, e.kind))
    return events


class Client:
    def __init__(self, index: int, key: KeyPair, sim: "Simulation"):
        self.index = index
        self.name = f"client-{index}"
        self.key = key
        self.sim = sim
        self.pending: dict[bytes, tuple[RollupTx, float]] = {}
        self.challenges: dict[bytes, RollupTx] = {}
        self.withdrawn = 0

    @property
    def address(self) -> PublicKey:
        return self.key.public_key

    def handle(self, ev: ClientEvent) -> None:
        if ev.kind == "deposit":
            self.deposit(ev.value)
        elif ev.kind == "challenge":
            self.challenge(ev.tx)
        else:
            self.send_tx(ev.tx, ev.kind)

    # -- deposits ------------------------------------------------------------
    def deposit(self, value: int) -> None:
        self.sim.submit(self.name, ChainCall(self.address, "Deposit", {}, value), self._deposit_receipt)

    def _deposit_receipt(self, r: Receipt) -> None:
        if r.ok:
            when = r.time + self.sim.tsc.tau + 1.0
            self.sim.queue.schedule(when, self._maybe_refund, r.result)

    def _maybe_refund(self, dep_id: bytes) -> None:
        dep = self.sim.tsc.deposits.get(dep_id)
        if dep is not None and not dep.solved and not dep.refunded:
            self.sim.submit(self.name, ChainCall(self.address, "RefundDeposit", {"id": dep_id}))

    # -- transfers -------------------------------------------------------------
    def send_tx(self, tx: RollupTx, kind: str = "transfer") -> None:
        h = tx.tx_hash()
        self.pending[h] = (tx, self.sim.now)
        self.sim.record("client_tx", client=self.name, tx=h, op=kind, nonce=tx.nonce, value=tx.value)
        size = self.sim.cfg.network.msg_overhead_bytes + self.sim.cfg.network.item_bytes
        for seq in self.sim.sequencers:
            self.sim.send(CLIENT_TX, self.name, seq.name, tx, size)
        after = self.sim.cfg.workload.challenge_after
        if after is not None:
            self.sim.queue.after(after, self._check, h)

    def on_message(self, msg: "Message") -> None:
        if msg.kind == CLIENT_REPLY:
            h, height = msg.payload
            if self.pending.pop(h, None) is not None:
                self.sim.record("reply", client=self.name, tx=h, height=height)

    def _check(self, h: bytes) -> None:
        if h not in self.pending or self.sim.tsc.contract_state != ACTIVE:
            return
        tx, _ = self.pending[h]
        nonce = self.sim.query_nonce(self.address)
        if nonce is not None and nonce > tx.nonce:
            self.pending.pop(h)
            return
        if not self.challenges:
            self.challenge(tx)

    # -- challenges ------------------------------------------------------------
    def challenge(self, tx: RollupTx) -> None:
        pledge = self.sim.cfg.chain.pledge_min
        call = ChainCall(self.address, "StartChallenge", {"tx": tx}, pledge)
        self.sim.submit(self.name, call, lambda r: self._challenge_receipt(r, tx))

    def _challenge_receipt(self, r: Receipt, tx: RollupTx) -> None:
        if not r.ok:
            return
        self.challenges[r.result] = tx
        self.sim.queue.schedule(r.time + self.sim.tsc.tau + 1.0, self._maybe_settle, r.result)

    def _maybe_settle(self, cid: bytes) -> None:
        tsc = self.sim.tsc
        if cid in tsc.challenges and tsc.contract_state == ACTIVE:
            self.sim.submit(self.name, ChainCall(self.address, "SettleRollup", {"id": cid}))

    # -- chain events ------------------------------------------------------------
    def on_chain_event(self, ev: Event) -> None:
        if ev.name == "ChallengeResolved":
            self.challenges.pop(ev.data["id"], None)
        elif ev.name == "Settle":
            self.withdraw()

    def withdraw(self) -> None:
        tsc = self.sim.tsc
        served = self.sim.query_proof(self.address, tsc.height)
        if served is None:
            self.sim.record("withdraw_unavailable", client=self.name, height=tsc.height)
            return
        balance, proof = served
        if balance == 0:
            return
        sig = sign_withdraw(self.key, self.address, balance)
        args = {"t_addr": self.address, "m_addr": self.address, "balance": balance, "proof": proof, "sig": sig}
        self.sim.submit(self.name, ChainCall(self.address, "SettleWithdraw", args))


class Auditor:
    """Issues random data requests to the DAPs and concludes them after the deadline."""

    name = "auditor"

    def __init__(self, key: KeyPair, sim: "Simulation", rng: np.random.Generator):
        self.key = key
        self.sim = sim
        self.rng = rng

    def start(self) -> None:
        d = self.sim.cfg.dap
        for k in range(1, d.audits + 1):
            self.sim.queue.schedule(k * d.audit_interval, self.request)

    def request(self) -> None:
        tsc = self.sim.tsc
        if tsc.height < 1 or not tsc.active_daps():
            return
        height = int(self.rng.integers(1, tsc.height + 1))
        pool = [c.address for c in self.sim.clients]
        k = min(self.sim.cfg.dap.sample_keys, len(pool))
        keys = [pool[int(i)] for i in sorted(self.rng.choice(len(pool), size=k, replace=False))] if k else []
        call = ChainCall(self.key.public_key, "DapRequest", {"height": height, "keys": keys})
        self.sim.submit(self.name, call, self._requested)

    def _requested(self, r: Receipt) -> None:
        if r.ok:
            deadline = self.sim.tsc.audits[r.result].deadline
            self.sim.queue.schedule(deadline + 0.001, self.conclude, r.result)

    def conclude(self, rid: bytes) -> None:
        self.sim.submit(self.name, ChainCall(self.key.public_key, "DapAudit", {"id": rid}))
