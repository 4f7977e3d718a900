"""On-chain contracts: the membership contract (MSC) and the rollup contract (TSC).

Every method validates all of its requirements before touching state, so a
raised ContractError leaves the contract unchanged. Receipt codes:

    E_FROZEN      contract not Active
    E_NOT_FROZEN  settlement method while Active
    E_VALUE       non-positive value
    E_HEIGHT      wrong height / unknown height
    E_PREV        prev_hash does not match the recorded latest state
    E_QC          quorum certificate invalid or over another digest
    E_DEPOSIT     lock references a missing, solved or refunded deposit
    E_ESCROW      escrow cannot cover the payout
    E_PLEDGE      challenge pledge below the minimum
    E_UNKNOWN     unknown id / unregistered party
    E_DUPLICATE   already registered / already exists
    E_TIMER       timer condition not met
    E_INCLUSION   batch does not contain the challenged transaction
    E_SIG         bad signature
    E_PROOF       Merkle proof does not verify
    E_WITHDRAWN   account already withdrawn
    E_BURN        the burn account cannot withdraw
    E_SOLVED      deposit already solved
    E_REFUNDED    deposit already refunded
    E_COLLATERAL  DAP collateral below the minimum
    E_QUOTE       attestation quote rejected
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import encoding as enc
from . import tee
from .chain import ChainLedger, Context, ContractError
from .core import (
    BURN_ADDRESS,
    GENESIS,
    PROGRAM_HASH,
    Batch,
    QuorumCertificate,
    RollupState,
    RollupTx,
    SideEffects,
    certified_digest,
    verify_qc,
)
from .crypto import Digest, KeyPair, PublicKey, hash, sign, verify
from .merkle import MerkleProof, verify_proof

ACTIVE = "Active"
FROZEN = "Frozen"

# collateral figures are integer hundredths of a token
DAP_SCALE = 100


def withdraw_message(t_addr: PublicKey, m_addr: PublicKey, balance: int) -> bytes:
    return hash(b"teerollup/withdraw" + t_addr + m_addr + enc.u128(balance))


def sign_withdraw(key: KeyPair, m_addr: PublicKey, balance: int) -> bytes:
    return sign(withdraw_message(key.public_key, m_addr, balance), key).value


def dap_register_message(d_addr: PublicKey, collateral: int) -> bytes:
    return hash(b"teerollup/dap-register" + d_addr + enc.u128(collateral))


def sign_dap_register(key: KeyPair, collateral: int) -> bytes:
    return sign(dap_register_message(key.public_key, collateral), key).value


# --------------------------------------------------------------------------
# MSC


@dataclass
class Registration:
    seq_id: str
    public_key: PublicKey
    platform: str


class MSC:
    def __init__(self, f: int, prog_hash: Digest = PROGRAM_HASH, authority: tee.AttestationAuthority = tee.DEFAULT_AUTHORITY):
        if f < 0:
            raise ValueError("f must be non-negative")
        self.f = f
        self.prog_hash = prog_hash
        self.authority = authority
        self.registry: list[Registration] = []
        self._keys: set[PublicKey] = set()

    def register(self, ctx: Context, args: dict) -> int:
        quote: tee.AttestationQuote = args["quote"]
        pk: PublicKey = args["pk"]
        if not tee.verify_quote(quote, self.authority) or quote.public_key != pk or quote.prog_hash != self.prog_hash:
            raise ContractError("E_QUOTE")
        if pk in self._keys:
            raise ContractError("E_DUPLICATE")
        self.registry.append(Registration(args.get("seq_id", pk.hex()[:8]), pk, args.get("platform", quote.platform)))
        self._keys.add(pk)
        ctx.emit("Registered", pk=pk, platform=quote.platform)
        return len(self.registry)

    def public_keys(self) -> list[PublicKey]:
        return [r.public_key for r in self.registry]

    def verify_qc(self, qc: QuorumCertificate) -> bool:
        return verify_qc(qc, self.f, self._keys)

    def state_digest(self) -> Digest:
        return hash(enc.u32(self.f) + b"".join(r.public_key for r in self.registry))

    def methods(self) -> dict:
        return {"Register": self.register}


# --------------------------------------------------------------------------
# TSC


@dataclass
class Deposit:
    sender: PublicKey
    value: int
    created_at: float
    solved: bool = False
    refunded: bool = False


@dataclass
class Challenge:
    tx: RollupTx
    start: float
    pledge: int
    challenger: PublicKey


@dataclass
class DapAccount:
    collateral: int
    active: bool = True
    slashed: int = 0


@dataclass
class AuditResponse:
    """Metadata slice for an audit: the batch plus proofs for the sampled keys."""

    height: int
    batch: Batch
    proofs: tuple[MerkleProof, ...]

    def encode(self) -> bytes:
        parts = [enc.u64(self.height), enc.varbytes(self.batch.encode()), enc.u32(len(self.proofs))]
        parts += [enc.varbytes(p.encode()) for p in self.proofs]
        return b"".join(parts)


@dataclass
class AuditRequest:
    height: int
    keys: tuple[PublicKey, ...]
    deadline: float
    daps: tuple[PublicKey, ...]
    responses: dict[PublicKey, AuditResponse] = field(default_factory=dict)
    concluded: bool = False


@dataclass
class DapParams:
    min_collateral: int = 1000 * DAP_SCALE  # C
    response_cost: int = 1 * DAP_SCALE  # W
    surcharge: int = 1  # epsilon, 0.01 tokens
    response_timeout: float = 600.0  # l, seconds


def slash_amounts(x: list[int], params: DapParams) -> list[int]:
    """Per-DAP slash for a response vector (1 = valid response before timeout)."""
    anyone = sum(x) >= 1
    out = []
    for xi in x:
        if xi == 1:
            out.append(0)
        elif anyone:
            out.append(params.response_cost + params.surcharge)
        else:
            out.append(params.min_collateral)
    return out


class TSC:
    def __init__(
        self,
        msc: MSC,
        challenge_timeout: float = 4 * 3600.0,
        pledge_min: int = 10,
        dap_params: DapParams | None = None,
        genesis: RollupState = GENESIS,
    ):
        self.msc = msc
        self.tau = float(challenge_timeout)
        self.pledge_min = pledge_min
        self.dap_params = dap_params or DapParams()
        self.contract_state = ACTIVE
        self.height = 0
        self.states: dict[int, RollupState] = {0: genesis}
        self.certified: dict[int, Digest] = {}
        self.accepted_at: dict[int, float] = {0: 0.0}
        self.deposits: dict[Digest, Deposit] = {}
        self.challenges: dict[Digest, Challenge] = {}
        self.escrow = 0
        self.pledges = 0
        self.forfeited = 0
        self.withdrawn: set[PublicKey] = set()
        self.daps: dict[PublicKey, DapAccount] = {}
        self.dap_pool = 0
        self.slashed_pool = 0
        self.audits: dict[Digest, AuditRequest] = {}
        self._block_seq: tuple[int, int] = (-1, 0)

    # -- helpers -----------------------------------------------------------
    def _require_active(self) -> None:
        if self.contract_state != ACTIVE:
            raise ContractError("E_FROZEN")

    def latest(self) -> RollupState:
        return self.states[self.height]

    def held_funds(self) -> int:
        return self.escrow + self.pledges + self.forfeited + self.dap_pool + self.slashed_pool

    def unsolved_deposits(self) -> dict[Digest, tuple[PublicKey, int]]:
        return {i: (d.sender, d.value) for i, d in self.deposits.items() if not d.solved and not d.refunded}

    def state_digest(self) -> Digest:
        parts = [
            self.contract_state.encode(),
            enc.u64(self.height),
            self.latest().digest(),
            enc.u128(self.escrow),
            enc.u128(self.pledges),
            enc.u128(self.forfeited),
            enc.u128(self.dap_pool),
            enc.u128(self.slashed_pool),
        ]
        for i in sorted(self.deposits):
            d = self.deposits[i]
            parts.append(i + enc.u128(d.value) + bytes([d.solved, d.refunded]))
        parts += sorted(self.challenges)
        parts += sorted(self.withdrawn)
        for a in sorted(self.daps):
            parts.append(a + enc.u128(self.daps[a].collateral) + bytes([self.daps[a].active]))
        for r in sorted(self.audits):
            parts.append(r + bytes([self.audits[r].concluded]) + b"".join(sorted(self.audits[r].responses)))
        return hash(b"".join(parts))

    # -- deposits ----------------------------------------------------------
    def deposit(self, ctx: Context, args: dict) -> Digest:
        self._require_active()
        if ctx.value <= 0:
            raise ContractError("E_VALUE")
        height, seq = self._block_seq
        seq = seq + 1 if height == ctx.height else 0
        self._block_seq = (ctx.height, seq)
        dep_id = hash(b"teerollup/deposit" + ctx.sender + enc.timestamp(ctx.time) + enc.u32(seq))
        self.deposits[dep_id] = Deposit(ctx.sender, ctx.value, ctx.time)
        self.escrow += ctx.value
        ctx.emit("Deposit", id=dep_id, sender=ctx.sender, value=ctx.value)
        return dep_id

    def refund_expired_deposit(self, ctx: Context, args: dict) -> int:
        dep = self.deposits.get(args["id"])
        if dep is None:
            raise ContractError("E_UNKNOWN")
        if dep.solved:
            raise ContractError("E_SOLVED")
        if dep.refunded:
            raise ContractError("E_REFUNDED")
        if not ctx.time - dep.created_at > self.tau:
            raise ContractError("E_TIMER")
        dep.refunded = True
        self.escrow -= dep.value
        ctx.pay(dep.sender, dep.value)
        ctx.emit("DepositRefunded", id=args["id"], sender=dep.sender, value=dep.value)
        return dep.value

    # -- state updates -----------------------------------------------------
    def update_state(self, ctx: Context, args: dict) -> int:
        state: RollupState = args["state"]
        qc: QuorumCertificate = args["qc"]
        effects = SideEffects(tuple(args.get("locks", ())), tuple(args.get("refunds", ())))
        self._require_active()
        if state.height != self.height + 1:
            raise ContractError("E_HEIGHT")
        if state.prev_hash != self.latest().digest():
            raise ContractError("E_PREV")
        if qc.digest != certified_digest(state, effects) or not self.msc.verify_qc(qc):
            raise ContractError("E_QC")
        seen = set()
        for dep_id, value in effects.locks:
            dep = self.deposits.get(dep_id)
            if dep is None or dep.solved or dep.refunded or dep.value != value or dep_id in seen:
                raise ContractError("E_DEPOSIT")
            seen.add(dep_id)
        total_refund = sum(v for _, v in effects.refunds)
        if total_refund > self.escrow:
            raise ContractError("E_ESCROW")

        self.height = state.height
        self.states[state.height] = state
        self.certified[state.height] = qc.digest
        self.accepted_at[state.height] = ctx.time
        for dep_id, _ in effects.locks:
            self.deposits[dep_id].solved = True
        for addr, v in effects.refunds:
            ctx.pay(addr, v)
        self.escrow -= total_refund
        ctx.emit(
            "StateUpdated",
            height=state.height,
            state_hash=state.digest(),
            digest=qc.digest,
            qc=qc,
            account_root=state.account_root,
            txs_hash=state.txs_hash,
            locks=[i for i, _ in effects.locks],
            refunds=total_refund,
        )
        return state.height

    # -- challenges --------------------------------------------------------
    def start_challenge(self, ctx: Context, args: dict) -> Digest:
        tx: RollupTx = args["tx"]
        self._require_active()
        if ctx.value < self.pledge_min:
            raise ContractError("E_PLEDGE")
        cid = hash(b"teerollup/challenge" + ctx.sender + tx.tx_hash() + enc.timestamp(ctx.time))
        if cid in self.challenges:
            raise ContractError("E_DUPLICATE")
        self.challenges[cid] = Challenge(tx, ctx.time, ctx.value, ctx.sender)
        self.pledges += ctx.value
        ctx.emit("Challenge", id=cid, tx=tx.encode(), tx_hash=tx.tx_hash(), start=ctx.time)
        return cid

    def resolve_challenge(self, ctx: Context, args: dict) -> str:
        cid: Digest = args["id"]
        height: int = args["height"]
        qc: QuorumCertificate = args["qc"]
        batch: Batch = args["batch"]
        self._require_active()
        chal = self.challenges.get(cid)
        if chal is None:
            raise ContractError("E_UNKNOWN")
        if ctx.time - chal.start > self.tau:
            raise ContractError("E_TIMER")
        if height not in self.certified:
            raise ContractError("E_HEIGHT")
        if qc.digest != self.certified[height] or not self.msc.verify_qc(qc):
            raise ContractError("E_QC")
        if batch.digest() != self.states[height].txs_hash or not batch.contains(chal.tx.tx_hash()):
            raise ContractError("E_INCLUSION")
        del self.challenges[cid]
        self.pledges -= chal.pledge
        # a tx executed before the challenge was opened makes the challenge frivolous
        if self.accepted_at[height] < chal.start:
            self.forfeited += chal.pledge
            outcome = "forfeited"
        else:
            ctx.pay(chal.challenger, chal.pledge)
            outcome = "returned"
        ctx.emit("ChallengeResolved", id=cid, height=height, pledge=outcome)
        return outcome

    def settle_rollup(self, ctx: Context, args: dict) -> None:
        cid: Digest = args["id"]
        self._require_active()
        chal = self.challenges.get(cid)
        if chal is None:
            raise ContractError("E_UNKNOWN")
        if not ctx.time - chal.start > self.tau:
            raise ContractError("E_TIMER")
        self.contract_state = FROZEN
        for c in self.challenges.values():
            ctx.pay(c.challenger, c.pledge)
        self.pledges = 0
        self.challenges.clear()
        ctx.emit("Settle", id=cid, height=self.height, account_root=self.latest().account_root)

    def settle_withdraw(self, ctx: Context, args: dict) -> int:
        t_addr: PublicKey = args["t_addr"]
        m_addr: PublicKey = args["m_addr"]
        balance: int = args["balance"]
        proof: MerkleProof = args["proof"]
        sig: bytes = args["sig"]
        if self.contract_state != FROZEN:
            raise ContractError("E_NOT_FROZEN")
        if t_addr == BURN_ADDRESS:
            raise ContractError("E_BURN")
        if t_addr in self.withdrawn:
            raise ContractError("E_WITHDRAWN")
        if not verify(withdraw_message(t_addr, m_addr, balance), sig, t_addr):
            raise ContractError("E_SIG")
        root = self.latest().account_root
        if proof.key != t_addr or proof.value != balance or not verify_proof(proof, root):
            raise ContractError("E_PROOF")
        if balance > self.escrow:
            raise ContractError("E_ESCROW")
        self.withdrawn.add(t_addr)
        self.escrow -= balance
        ctx.pay(m_addr, balance)
        ctx.emit("Withdrawn", t_addr=t_addr, m_addr=m_addr, value=balance)
        return balance

    # -- data availability providers --------------------------------------
    def dap_register(self, ctx: Context, args: dict) -> None:
        d_addr: PublicKey = ctx.sender
        if not verify(dap_register_message(d_addr, ctx.value), args["sig"], d_addr):
            raise ContractError("E_SIG")
        if ctx.value < self.dap_params.min_collateral:
            raise ContractError("E_COLLATERAL")
        if d_addr in self.daps:
            raise ContractError("E_DUPLICATE")
        self.daps[d_addr] = DapAccount(ctx.value)
        self.dap_pool += ctx.value
        ctx.emit("DapRegistered", dap=d_addr, collateral=ctx.value)

    def active_daps(self) -> list[PublicKey]:
        return sorted(a for a, d in self.daps.items() if d.active)

    def dap_request(self, ctx: Context, args: dict) -> Digest:
        height: int = args["height"]
        keys = tuple(args["keys"])
        if height not in self.states:
            raise ContractError("E_HEIGHT")
        rid = hash(b"teerollup/audit" + ctx.sender + enc.u64(height) + b"".join(keys) + enc.timestamp(ctx.time))
        if rid in self.audits:
            raise ContractError("E_DUPLICATE")
        daps = tuple(self.active_daps())
        self.audits[rid] = AuditRequest(height, keys, ctx.time + self.dap_params.response_timeout, daps)
        ctx.emit("AuditRequest", id=rid, height=height, keys=list(keys), deadline=self.audits[rid].deadline)
        return rid

    def dap_respond(self, ctx: Context, args: dict) -> None:
        req = self.audits.get(args["id"])
        if req is None or ctx.sender not in req.daps:
            raise ContractError("E_UNKNOWN")
        if ctx.time > req.deadline or req.concluded:
            raise ContractError("E_TIMER")
        if ctx.sender in req.responses:
            raise ContractError("E_DUPLICATE")
        req.responses[ctx.sender] = args["response"]

    def response_valid(self, req: AuditRequest, resp: AuditResponse | None) -> bool:
        if resp is None or not isinstance(resp, AuditResponse) or resp.height != req.height:
            return False
        state = self.states[req.height]
        try:
            if resp.batch.digest() != state.txs_hash:
                return False
        except (ValueError, AttributeError):
            return False
        proved = {p.key for p in resp.proofs if verify_proof(p, state.account_root)}
        return all(k in proved for k in req.keys)

    def dap_audit(self, ctx: Context, args: dict) -> list[int]:
        rid = args["id"]
        req = self.audits.get(rid)
        if req is None:
            raise ContractError("E_UNKNOWN")
        if req.concluded:
            raise ContractError("E_DUPLICATE")
        if not ctx.time > req.deadline:
            raise ContractError("E_TIMER")
        x = [1 if self.response_valid(req, req.responses.get(d)) else 0 for d in req.daps]
        slashes = slash_amounts(x, self.dap_params)
        req.concluded = True
        applied = []
        for d, s in zip(req.daps, slashes):
            acct = self.daps[d]
            s = min(s, acct.collateral)
            acct.collateral -= s
            acct.slashed += s
            if acct.collateral == 0:
                acct.active = False
            self.dap_pool -= s
            self.slashed_pool += s
            applied.append(s)
        ctx.emit("Audit", id=rid, daps=list(req.daps), responses=x, slashes=applied)
        return applied

    def methods(self) -> dict:
        return {
            "Deposit": self.deposit,
            "UpdateState": self.update_state,
            "StartChallenge": self.start_challenge,
            "ResolveChallenge": self.resolve_challenge,
            "SettleRollup": self.settle_rollup,
            "SettleWithdraw": self.settle_withdraw,
            "RefundDeposit": self.refund_expired_deposit,
            "DapRegister": self.dap_register,
            "DapRequest": self.dap_request,
            "DapRespond": self.dap_respond,
            "DapAudit": self.dap_audit,
        }


def deploy(
    ledger: ChainLedger,
    f: int,
    challenge_timeout: float = 4 * 3600.0,
    pledge_min: int = 10,
    dap_params: DapParams | None = None,
    genesis: RollupState = GENESIS,
) -> tuple[MSC, TSC]:
    msc = MSC(f)
    tsc = TSC(msc, challenge_timeout, pledge_min, dap_params, genesis)
    ledger.install("msc", msc, msc.methods())
    ledger.install("tsc", tsc, tsc.methods())
    return msc, tsc
