"""Rollup state machine: transactions, batch execution, votes and QCs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from . import encoding as enc
from . import tee
from .crypto import Digest, KeyPair, PublicKey, hash, sign, verify
from .merkle import AccountTree

BURN_ADDRESS: PublicKey = bytes(32)
PROGRAM_HASH: Digest = hash(b"teerollup/enclave-program/v1")

KIND_ISSUE = 0
KIND_TRANSFER = 1


class StateMismatch(Exception):
    """The supplied account tree does not match the claimed parent state."""


class VoteRefused(Exception):
    pass


class QuorumError(Exception):
    pass


def _addr(b: bytes) -> bytes:
    if len(b) != 32:
        raise ValueError("addresses are 32-byte public keys")
    return b


@dataclass(frozen=True)
class RollupTx:
    sender: PublicKey
    receiver: PublicKey
    value: int
    nonce: int
    signature: bytes = field(default=b"", repr=False)

    @staticmethod
    def signing_body(sender: bytes, receiver: bytes, value: int, nonce: int) -> bytes:
        return b"teerollup/tx" + _addr(sender) + _addr(receiver) + enc.u128(value) + enc.u64(nonce)

    @classmethod
    def create(cls, key: KeyPair, receiver: PublicKey, value: int, nonce: int) -> "RollupTx":
        body = cls.signing_body(key.public_key, receiver, value, nonce)
        return cls(key.public_key, receiver, value, nonce, sign(hash(body), key).value)

    def signature_valid(self) -> bool:
        try:
            body = self.signing_body(self.sender, self.receiver, self.value, self.nonce)
        except ValueError:
            return False
        return verify(hash(body), self.signature, self.sender)

    def encode(self) -> bytes:
        return (
            enc.u8(KIND_TRANSFER)
            + _addr(self.sender)
            + _addr(self.receiver)
            + enc.u128(self.value)
            + enc.u64(self.nonce)
            + enc.varbytes(self.signature)
        )

    def tx_hash(self) -> Digest:
        return hash(self.encode())


@dataclass(frozen=True)
class IssueRecord:
    """Mint of TTokens against an on-chain deposit."""

    deposit_id: Digest
    recipient: PublicKey
    value: int

    def encode(self) -> bytes:
        return enc.u8(KIND_ISSUE) + self.deposit_id + _addr(self.recipient) + enc.u128(self.value)

    def tx_hash(self) -> Digest:
        return hash(self.encode())


BatchItem = Union[IssueRecord, RollupTx]


def decode_item(r: enc.Reader) -> BatchItem:
    kind = r.u8()
    if kind == KIND_ISSUE:
        return IssueRecord(r.take(32), r.take(32), r.u128())
    if kind == KIND_TRANSFER:
        return RollupTx(r.take(32), r.take(32), r.u128(), r.u64(), r.varbytes())
    raise ValueError(f"unknown batch item kind {kind}")


@dataclass(frozen=True)
class Batch:
    items: tuple[BatchItem, ...] = ()

    def __len__(self) -> int:
        return len(self.items)

    def encode(self) -> bytes:
        return enc.u32(len(self.items)) + b"".join(i.encode() for i in self.items)

    @classmethod
    def decode(cls, data: bytes) -> "Batch":
        r = enc.Reader(data)
        items = tuple(decode_item(r) for _ in range(r.u32()))
        if not r.done():
            raise ValueError("trailing bytes in batch")
        return cls(items)

    def digest(self) -> Digest:
        return hash(self.encode())

    def contains(self, tx_hash: Digest) -> bool:
        return any(i.tx_hash() == tx_hash for i in self.items)


EMPTY_BATCH_HASH = Batch().digest()


@dataclass(frozen=True)
class RollupState:
    height: int
    prev_hash: Digest
    account_root: Digest
    txs_hash: Digest

    def encode(self) -> bytes:
        return b"teerollup/state" + enc.u64(self.height) + self.prev_hash + self.account_root + self.txs_hash

    @classmethod
    def decode(cls, data: bytes) -> "RollupState":
        r = enc.Reader(data)
        if r.take(15) != b"teerollup/state":
            raise ValueError("not a state encoding")
        st = cls(r.u64(), r.take(32), r.take(32), r.take(32))
        if not r.done():
            raise ValueError("trailing bytes in state")
        return st

    def digest(self) -> Digest:
        return hash(self.encode())


GENESIS = RollupState(0, bytes(32), AccountTree().root(), EMPTY_BATCH_HASH)


def genesis(depth: int | None = None) -> RollupState:
    if depth is None:
        return GENESIS
    return RollupState(0, bytes(32), AccountTree(depth).root(), EMPTY_BATCH_HASH)


@dataclass(frozen=True)
class SideEffects:
    """Main-chain effects a state carries: deposit locks and burn refunds."""

    locks: tuple[tuple[Digest, int], ...] = ()
    refunds: tuple[tuple[PublicKey, int], ...] = ()

    def encode(self) -> bytes:
        out = [enc.u32(len(self.locks))]
        out += [dep_id + enc.u128(v) for dep_id, v in self.locks]
        out.append(enc.u32(len(self.refunds)))
        out += [addr + enc.u128(v) for addr, v in self.refunds]
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "SideEffects":
        r = enc.Reader(data)
        locks = tuple((r.take(32), r.u128()) for _ in range(r.u32()))
        refunds = tuple((r.take(32), r.u128()) for _ in range(r.u32()))
        if not r.done():
            raise ValueError("trailing bytes in side effects")
        return cls(locks, refunds)

    def digest(self) -> Digest:
        return hash(self.encode())


def certified_digest(state: RollupState, effects: SideEffects) -> Digest:
    """What votes sign: the state together with the chain effects it triggers."""
    return hash(b"teerollup/certify" + state.digest() + effects.digest())


@dataclass(frozen=True)
class ExecutionInput:
    prev_state: RollupState
    prev_tree: AccountTree
    batch: Batch
    # unsolved on-chain deposits: id -> (depositor, value)
    deposits: Mapping[Digest, tuple[PublicKey, int]] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecutionOutput:
    state: RollupState
    tree: AccountTree
    effects: SideEffects
    rejected: tuple[tuple[int, str], ...] = ()

    def digest(self) -> Digest:
        return certified_digest(self.state, self.effects)


def execute(inp: ExecutionInput) -> ExecutionOutput:
    """Apply a batch on top of its parent; invalid items are skipped and recorded."""
    prev_tree = inp.prev_tree
    if prev_tree.root() != inp.prev_state.account_root:
        raise StateMismatch("account tree does not match the parent state")
    accounts: dict[PublicKey, list[int]] = {}

    def acct(a: PublicKey) -> list[int]:
        if a not in accounts:
            accounts[a] = list(prev_tree.get(a))
        return accounts[a]

    locks: list[tuple[Digest, int]] = []
    refunds: list[tuple[PublicKey, int]] = []
    rejected: list[tuple[int, str]] = []
    issued: set[Digest] = set()
    for i, item in enumerate(inp.batch.items):
        if isinstance(item, IssueRecord):
            dep = inp.deposits.get(item.deposit_id)
            if item.deposit_id in issued:
                rejected.append((i, "duplicate-deposit"))
            elif dep is None or dep != (item.recipient, item.value) or item.value <= 0:
                rejected.append((i, "unknown-deposit"))
            else:
                issued.add(item.deposit_id)
                acct(item.recipient)[0] += item.value
                locks.append((item.deposit_id, item.value))
            continue
        tx = item
        if tx.value <= 0:
            rejected.append((i, "non-positive-value"))
        elif tx.sender == BURN_ADDRESS:
            rejected.append((i, "burn-sender"))
        elif not tx.signature_valid():
            rejected.append((i, "bad-signature"))
        elif tx.nonce != acct(tx.sender)[1]:
            rejected.append((i, "bad-nonce"))
        elif acct(tx.sender)[0] < tx.value:
            rejected.append((i, "insufficient-balance"))
        else:
            s = acct(tx.sender)
            s[0] -= tx.value
            s[1] += 1
            acct(tx.receiver)[0] += tx.value
            if tx.receiver == BURN_ADDRESS:
                refunds.append((tx.sender, tx.value))

    tree = prev_tree.copy()
    for addr, (bal, nonce) in accounts.items():
        tree.set_balance(addr, bal, nonce)
    state = RollupState(
        inp.prev_state.height + 1,
        inp.prev_state.digest(),
        tree.root(),
        inp.batch.digest(),
    )
    return ExecutionOutput(state, tree, SideEffects(tuple(locks), tuple(refunds)), tuple(rejected))


tee.register_program(PROGRAM_HASH, execute)


@dataclass(frozen=True)
class Vote:
    digest: Digest
    voter: PublicKey
    signature: bytes

    def valid(self) -> bool:
        return verify(self.digest, self.signature, self.voter)

    def encode(self) -> bytes:
        return self.digest + self.voter + enc.varbytes(self.signature)


@dataclass(frozen=True)
class QuorumCertificate:
    digest: Digest
    votes: tuple[Vote, ...]

    def voters(self) -> set[PublicKey]:
        return {v.voter for v in self.votes}

    def encode(self) -> bytes:
        return self.digest + enc.u32(len(self.votes)) + b"".join(v.encode() for v in self.votes)

    @classmethod
    def decode(cls, data: bytes) -> "QuorumCertificate":
        r = enc.Reader(data)
        digest = r.take(32)
        votes = tuple(Vote(r.take(32), r.take(32), r.varbytes()) for _ in range(r.u32()))
        if not r.done():
            raise ValueError("trailing bytes in QC")
        return cls(digest, votes)


def counted_voters(votes: Iterable[Vote], digest: Digest, registry: Iterable[PublicKey]) -> set[PublicKey]:
    registered = set(registry)
    return {v.voter for v in votes if v.digest == digest and v.voter in registered and v.valid()}


def verify_qc(qc: QuorumCertificate, f: int, registry: Iterable[PublicKey]) -> bool:
    if any(v.digest != qc.digest for v in qc.votes):
        return False
    return len(counted_voters(qc.votes, qc.digest, registry)) >= f + 1


def aggregate_qc(votes: Iterable[Vote], f: int, registry: Iterable[PublicKey]) -> QuorumCertificate:
    votes = list(votes)
    digests = {v.digest for v in votes}
    if len(digests) != 1:
        raise QuorumError("votes must cover exactly one digest")
    (digest,) = digests
    registered = set(registry)
    chosen: dict[PublicKey, Vote] = {}
    for v in votes:
        if v.voter in registered and v.voter not in chosen and v.valid():
            chosen[v.voter] = v
    if len(chosen) < f + 1:
        raise QuorumError(f"{len(chosen)} distinct valid votes, need {f + 1}")
    return QuorumCertificate(digest, tuple(sorted(chosen.values(), key=lambda v: v.voter)))


def make_vote(enclave: tee.Enclave, proposal: ExecutionOutput | tuple[RollupState, SideEffects], justification: ExecutionInput) -> Vote:
    """Re-execute ``justification`` inside the enclave and vote iff it reproduces the proposal."""
    if isinstance(proposal, ExecutionOutput):
        claimed = proposal.digest()
    else:
        claimed = certified_digest(*proposal)
    try:
        out, sig = tee.resume(enclave, justification)
    except StateMismatch as exc:
        raise VoteRefused(str(exc)) from None
    if out.digest() != claimed:
        raise VoteRefused("re-execution does not reproduce the proposed state")
    return Vote(claimed, enclave.public_key, sig.value)


def forge_vote(key: KeyPair, digest: Digest) -> Vote:
    """Vote produced with a leaked enclave key, bypassing re-execution."""
    return Vote(digest, key.public_key, sign(digest, key).value)


@dataclass
class Metadata:
    """Off-chain companion of an accepted state, as held by DAPs."""

    state: RollupState
    tree: AccountTree
    batch: Batch
    effects: SideEffects = field(default_factory=SideEffects)

    def consistent(self, state: RollupState | None = None) -> bool:
        target = self.state if state is None else state
        return (
            self.state == target
            and self.tree.root() == target.account_root
            and self.batch.digest() == target.txs_hash
        )


def verify_chain(states: list[RollupState]) -> bool:
    """Hash-chain check from genesis over a sequence of accepted states."""
    if not states or states[0].height != 0:
        return False
    for prev, cur in zip(states, states[1:]):
        if cur.height != prev.height + 1 or cur.prev_hash != prev.digest():
            return False
    return True
