"""Sequencer actor: mempool, proposals, voting, chain submission, challenges."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from . import tee
from .adversary import SequencerProfile
from .chain import ChainCall, Event
from .core import (
    Batch,
    ExecutionInput,
    ExecutionOutput,
    IssueRecord,
    Metadata,
    QuorumCertificate,
    QuorumError,
    RollupState,
    RollupTx,
    SideEffects,
    Vote,
    VoteRefused,
    aggregate_qc,
    decode_item,
    execute,
    make_vote,
)
from . import encoding as enc
from .merkle import AccountTree

if TYPE_CHECKING:
    from .sim.harness import Simulation
    from .sim.network import Message

# network message kinds
PROPOSAL = "PROPOSAL"
VOTE = "VOTE"
METADATA_PUSH = "METADATA_PUSH"
CLIENT_TX = "CLIENT_TX"
CLIENT_REPLY = "CLIENT_REPLY"

# a follower that did not vote for the accepted state fetches it from DAPs
ADOPT_RETRIES = 20
ADOPT_RETRY_DELAY = 0.5


@dataclass
class Proposal:
    leader: str
    state: RollupState
    effects: SideEffects
    batch: Batch


@dataclass
class _Collect:
    output: ExecutionOutput
    batch: Batch
    forged: bool = False
    votes: dict[bytes, Vote] = field(default_factory=dict)
    submitted: bool = False
    started: float = 0.0


class SequencerNode:
    def __init__(self, index: int, enclave: tee.Enclave, sim: "Simulation", genesis_tree: AccountTree):
        self.index = index
        self.name = f"seq-{index}"
        self.enclave = enclave
        self.sim = sim
        self.profile = SequencerProfile(index)
        self.mempool: dict[bytes, tuple[RollupTx, float]] = {}
        self.forced: dict[bytes, tuple[RollupTx, float]] = {}
        self.issues: dict[bytes, tuple[IssueRecord, float]] = {}
        self.height = 0
        self.state = sim.tsc.latest()
        self.tree = genesis_tree
        self.height_base = 0.0
        self.accepted: dict[int, tuple[RollupState, QuorumCertificate, Batch]] = {}
        self.included: dict[bytes, int] = {}
        self.voted: dict[int, bytes] = {}
        self.collect: dict[bytes, _Collect] = {}
        self.known: dict[bytes, ExecutionInput] = {}
        self.own: dict[bytes, ExecutionOutput] = {}
        self.waiting: list[Proposal] = []
        self.open_challenges: dict[bytes, RollupTx] = {}
        self.frozen = False
        self.stuck = False
        self.updates: list[Event] = []
        self.adopt_attempts = 0
        self._timer_gen = 0
        self._timer_at: float | None = None

    # -- helpers -----------------------------------------------------------
    @property
    def honest(self) -> bool:
        return self.profile.behavior == "honest"

    @property
    def n(self) -> int:
        return len(self.sim.sequencers)

    def rank(self, height: int) -> int:
        return (self.index - height) % self.n

    def slot(self, height: int) -> int:
        # the first race_width ranks share slot 0 and compete
        return max(0, self.rank(height) - self.sim.cfg.committee.race_width + 1)

    def work(self) -> int:
        return len(self.issues) + len(self.forced) + len(self.mempool)

    def oldest_work(self) -> float:
        times = [next(iter(d.values()))[1] for d in (self.issues, self.forced, self.mempool) if d]
        return min(times) if times else self.sim.now

    def build_batch(self) -> Batch:
        size = self.sim.cfg.committee.batch_size
        items: list[Any] = []
        for source in (self.issues, self.forced, self.mempool):
            for h, (item, _) in source.items():
                if len(items) >= size:
                    break
                if h not in self.included:
                    items.append(item)
        return Batch(tuple(items))

    # -- proposal timer ------------------------------------------------------
    def poke(self) -> None:
        if self.frozen or self.stuck or self.profile.behavior == "silent":
            return
        target = self.height + 1
        if target in self.voted or self.work() == 0:
            return
        cfg = self.sim.cfg.committee
        base = max(self.height_base, self.oldest_work())
        t = base + self.slot(target) * cfg.stagger
        if self.work() < cfg.batch_size:
            t = max(t, self.oldest_work() + cfg.max_batch_wait)
        t = max(t, self.sim.now)
        if self._timer_at is not None and self._timer_at <= t:
            return
        self._timer_gen += 1
        self._timer_at = t
        self.sim.queue.schedule(t, self._on_timer, self._timer_gen)

    def _on_timer(self, gen: int) -> None:
        if gen != self._timer_gen:
            return
        self._timer_at = None
        if self.frozen or self.stuck or (self.height + 1) in self.voted or self.work() == 0:
            return
        cfg = self.sim.cfg.committee
        if self.work() < cfg.batch_size and self.sim.now < self.oldest_work() + cfg.max_batch_wait:
            self.poke()
            return
        self.propose()

    # -- leader path ---------------------------------------------------------
    def propose(self) -> None:
        target = self.height + 1
        batch = self.build_batch()
        inp = ExecutionInput(self.state, self.tree, batch, self.sim.tsc.unsolved_deposits())
        if self.profile.behavior == "forger":
            self._propose_forgery(inp)
            return
        try:
            out, _sig = tee.resume(self.enclave, inp)
        except tee.EnclaveUnavailable:
            return
        digest = out.digest()
        self.voted[target] = digest
        self.own[digest] = out
        c = _Collect(out, batch, started=self.sim.now)
        self.collect[digest] = c
        own_vote = make_vote(self.enclave, out, inp)
        self.sim.record("proposal", node=self.name, height=target, digest=digest, forged=False, strategy=None,
                        state=out.state, effects=out.effects, batch=batch, rejected=len(out.rejected))
        self.sim.record("vote", node=self.name, height=target, digest=digest, honest=self.honest)
        delay = self.sim.exec_time(len(batch))
        self.sim.queue.after(delay, self._broadcast_proposal, Proposal(self.name, out.state, out.effects, batch), own_vote)

    def _broadcast_proposal(self, prop: Proposal, own_vote: Vote) -> None:
        size = self.sim.proposal_size(len(prop.batch))
        for peer in self.sim.sequencers:
            if peer is not self:
                self.sim.send(PROPOSAL, self.name, peer.name, prop, size)
        self._add_vote(own_vote)

    def _propose_forgery(self, inp: ExecutionInput) -> None:
        target = self.height + 1
        if target in self.voted:
            return
        rng = self.sim.streams.get(f"adversary/{self.name}")
        forgery = self.sim.adversary.forge(self.profile.forge_strategy, inp, rng)
        out = forgery.output
        digest = out.digest()
        self.voted[target] = digest
        c = _Collect(out, forgery.batch, forged=True, started=self.sim.now)
        self.collect[digest] = c
        self.own[digest] = out
        for v in self.sim.adversary.colluder_votes(digest):
            c.votes[v.voter] = v
        self.sim.record("proposal", node=self.name, height=out.state.height, digest=digest, forged=True,
                        strategy=forgery.strategy, state=out.state, effects=out.effects, batch=forgery.batch,
                        rejected=len(out.rejected))
        prop = Proposal(self.name, out.state, out.effects, forgery.batch)
        size = self.sim.proposal_size(len(forgery.batch))
        for peer in self.sim.sequencers:
            if peer is not self:
                self.sim.send(PROPOSAL, self.name, peer.name, prop, size)
        wait = 2 * self.sim.net.one_way() + 2 * self.sim.exec_time(len(forgery.batch)) + 0.05
        self.sim.queue.after(wait, self._submit_forgery, digest)

    def _submit_forgery(self, digest: bytes) -> None:
        c = self.collect.get(digest)
        # pruned once the height was settled by someone else
        if c is None or c.submitted:
            return
        c.submitted = True
        votes = sorted(c.votes.values(), key=lambda v: v.voter)
        # pad with a repeated vote to look like a full quorum
        f = self.sim.cfg.committee.f
        while votes and len(votes) < f + 1:
            votes.append(votes[0])
        qc = QuorumCertificate(digest, tuple(votes))
        self._submit_update(c, qc)

    def _add_vote(self, vote: Vote) -> None:
        c = self.collect.get(vote.digest)
        if c is None or c.submitted or vote.voter in c.votes:
            return
        if not vote.valid():
            return
        c.votes[vote.voter] = vote
        f = self.sim.cfg.committee.f
        if c.forged or len(c.votes) < f + 1:
            return
        try:
            qc = aggregate_qc(c.votes.values(), f, self.sim.msc.public_keys())
        except QuorumError:
            return
        c.submitted = True
        self.sim.record("qc", node=self.name, height=c.output.state.height, digest=vote.digest,
                        voters=sorted(c.votes), latency=self.sim.now - c.started)
        self.sim.queue.after(self.sim.vote_time(len(c.votes)), self._submit_update, c, qc)

    def _submit_update(self, c: _Collect, qc: QuorumCertificate) -> None:
        call = ChainCall(
            self.enclave.public_key,
            "UpdateState",
            {"state": c.output.state, "qc": qc, "locks": c.output.effects.locks, "refunds": c.output.effects.refunds},
        )
        self.sim.submit(self.name, call)

    # -- follower path -------------------------------------------------------
    def on_message(self, msg: "Message") -> None:
        if msg.kind == PROPOSAL:
            self.on_proposal(msg.payload)
        elif msg.kind == VOTE:
            self._add_vote(msg.payload)
        elif msg.kind == CLIENT_TX:
            self.on_client_tx(msg.payload)
        elif isinstance(msg.payload, Event):
            self.on_chain_event(msg.payload)

    def on_client_tx(self, tx: RollupTx) -> bool:
        h = tx.tx_hash()
        if h in self.mempool or h in self.forced or h in self.included:
            return False
        self.mempool[h] = (tx, self.sim.now)
        self.poke()
        return True

    def on_proposal(self, prop: Proposal) -> None:
        if self.profile.behavior in ("forger", "silent") or self.frozen:
            return
        h = prop.state.height
        if h > self.height + 1:
            self.waiting.append(prop)
            return
        reason = None
        if h <= self.height:
            reason = "stale-height"
        elif h in self.voted:
            reason = "already-voted"
        elif prop.state.prev_hash != self.state.digest():
            reason = "stale-parent"
        if reason is None:
            inp = ExecutionInput(self.state, self.tree, prop.batch, self.sim.tsc.unsolved_deposits())
            try:
                vote = make_vote(self.enclave, (prop.state, prop.effects), inp)
            except VoteRefused:
                reason = "re-execution-mismatch"
            except tee.EnclaveUnavailable:
                return
        if reason is not None:
            self.sim.record("refuse", node=self.name, height=h, leader=prop.leader, reason=reason)
            return
        self.voted[h] = vote.digest
        self.known[vote.digest] = inp
        self.sim.record("vote", node=self.name, height=h, digest=vote.digest, honest=self.honest)
        self.sim.queue.after(self.sim.exec_time(len(prop.batch)), self.sim.send, VOTE, self.name, prop.leader, vote, 160)

    # -- chain observation ---------------------------------------------------
    def on_chain_event(self, ev: Event) -> None:
        handler = getattr(self, f"_ev_{ev.name}", None)
        if handler is not None:
            handler(ev)

    def _ev_Deposit(self, ev) -> None:
        d = ev.data
        self.issues[d["id"]] = (IssueRecord(d["id"], d["sender"], d["value"]), self.sim.now)
        self.poke()

    def _ev_DepositRefunded(self, ev) -> None:
        self.issues.pop(ev.data["id"], None)

    def _ev_Settle(self, ev) -> None:
        self.frozen = True

    def _ev_ChallengeResolved(self, ev) -> None:
        self.open_challenges.pop(ev.data["id"], None)

    def _ev_Challenge(self, ev) -> None:
        if self.profile.behavior in ("forger", "silent"):
            return
        r = enc.Reader(ev.data["tx"])
        tx = decode_item(r)
        cid = ev.data["id"]
        self.open_challenges[cid] = tx
        h = tx.tx_hash()
        if h in self.included:
            self._schedule_resolve(cid, self.included[h])
            return
        self.mempool.pop(h, None)
        self.forced.setdefault(h, (tx, self.sim.now))
        self.poke()

    def _ev_StateUpdated(self, ev: Event) -> None:
        self.updates.append(ev)
        if len(self.updates) == 1:
            self._drain_updates()

    def _drain_updates(self) -> None:
        while self.updates:
            ev = self.updates[0]
            if ev.data["height"] <= self.height:
                self.updates.pop(0)
                continue
            if not self._apply_update(ev):
                self._retry(ev)
                return
            self.updates.pop(0)

    def _retry(self, ev: Event) -> None:
        self.adopt_attempts += 1
        if self.adopt_attempts > ADOPT_RETRIES:
            self.stuck = True
            self.updates.clear()
            self.sim.record("stuck", node=self.name, height=ev.data["height"])
            return
        self.sim.queue.after(ADOPT_RETRY_DELAY, self._drain_updates)

    def _apply_update(self, ev: Event) -> bool:
        d = ev.data
        height = d["height"]
        digest = d["digest"]
        adopted = self._adopt(height, digest, d["state_hash"])
        if adopted is None:
            return False
        self.adopt_attempts = 0
        state, tree, batch, effects, mine = adopted
        self.height, self.state, self.tree = height, state, tree
        self.height_base = self.sim.now
        self.accepted[height] = (state, d["qc"], batch)
        for item in batch.items:
            h = item.tx_hash()
            self.included[h] = height
            self.mempool.pop(h, None)
            self.forced.pop(h, None)
            if isinstance(item, IssueRecord):
                self.issues.pop(item.deposit_id, None)
        for dep_id in d["locks"]:
            self.issues.pop(dep_id, None)
        if mine:
            self._finalize(state, tree, batch, effects)
        for cid, tx in list(self.open_challenges.items()):
            if tx.tx_hash() in self.included:
                self._schedule_resolve(cid, self.included[tx.tx_hash()])
        # drop bookkeeping for settled heights
        self.collect = {k: v for k, v in self.collect.items() if v.output.state.height > height}
        self.own = {k: v for k, v in self.own.items() if v.state.height > height}
        self.known = {k: v for k, v in self.known.items() if v.prev_state.height >= height}
        waiting, self.waiting = self.waiting, []
        for prop in waiting:
            self.on_proposal(prop)
        self.poke()
        return True

    def _adopt(self, height: int, digest: bytes, state_hash: bytes):
        """Find the tree behind an accepted state: own output, re-execution, or a DAP copy."""
        if height != self.height + 1:
            return None
        out = self.own.get(digest)
        if out is not None:
            c = self.collect.get(digest)
            return out.state, out.tree, c.batch if c else Batch(), out.effects, True
        inp = self.known.get(digest)
        if inp is not None and inp.prev_state == self.state:
            out = execute(inp)
            if out.digest() == digest:
                return out.state, out.tree, inp.batch, out.effects, False
        md = self.sim.fetch_metadata(height, state_hash)
        if md is not None and md.state.prev_hash == self.state.digest():
            return md.state, md.tree.copy(), md.batch, md.effects, False
        return None

    def _finalize(self, state: RollupState, tree: AccountTree, batch: Batch, effects: SideEffects) -> None:
        """Leader duties once its state is on chain: metadata to DAPs, replies to clients."""
        if not self.profile.withhold_metadata:
            md = Metadata(state, tree, batch, effects)
            size = self.sim.metadata_size(len(batch), len(tree))
            for dap in self.sim.daps:
                self.sim.send(METADATA_PUSH, self.name, dap.name, md, size)
        if self.profile.behavior != "honest":
            return
        for item in batch.items:
            if isinstance(item, RollupTx):
                client = self.sim.client_by_addr.get(item.sender)
                if client is not None:
                    self.sim.send(CLIENT_REPLY, self.name, client.name, (item.tx_hash(), state.height), 128)

    def _schedule_resolve(self, cid: bytes, height: int) -> None:
        delay = self.rank(height) * self.sim.cfg.committee.resolve_stagger
        self.sim.queue.after(delay, self._resolve, cid, height)

    def _resolve(self, cid: bytes, height: int) -> None:
        if self.frozen or cid not in self.sim.tsc.challenges or height not in self.accepted:
            return
        _, qc, batch = self.accepted[height]
        call = ChainCall(self.enclave.public_key, "ResolveChallenge", {"id": cid, "height": height, "qc": qc, "batch": batch})
        self.sim.submit(self.name, call)
