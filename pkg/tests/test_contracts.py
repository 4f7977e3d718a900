import itertools

import pytest
from hypothesis import given, strategies as st

from teerollup import tee
from teerollup.chain import ChainCall, ChainLedger
from teerollup.contracts import (
    FROZEN,
    AuditResponse,
    DapParams,
    deploy,
    sign_dap_register,
    sign_withdraw,
    slash_amounts,
)
from teerollup.core import (
    BURN_ADDRESS,
    PROGRAM_HASH,
    Batch,
    ExecutionInput,
    IssueRecord,
    RollupTx,
    aggregate_qc,
    execute,
    genesis,
    make_vote,
)
from teerollup.crypto import gen_keypair, hash
from teerollup.merkle import AccountTree

DEPTH = 16
TAU = 100.0
ALICE, BOB = gen_keypair(hash(b"alice")), gen_keypair(hash(b"bob"))


class Rollup:
    """A ledger with n=4, f=1 and helpers to drive the rollup by hand."""

    def __init__(self):
        self.ledger = ChainLedger()
        self.msc, self.tsc = deploy(self.ledger, 1, TAU, 10, DapParams(min_collateral=100), genesis(DEPTH))
        self.enclaves = [tee.install(PROGRAM_HASH, bytes([i]) * 32) for i in range(4)]
        for k in (ALICE, BOB):
            self.ledger.faucet(k.public_key, 10_000)
        self.op = gen_keypair(b"operator" * 4)
        self.ledger.faucet(self.op.public_key, 10_000)
        for i, e in enumerate(self.enclaves):
            r = self.call(self.op, "Register", {"quote": tee.attest(e), "pk": e.public_key, "seq_id": f"s{i}"})
            assert r.ok
        self.tree = AccountTree(DEPTH)

    def call(self, key, method, args=None, value=0, dt=1.0):
        return self.ledger.submit(ChainCall(key.public_key, method, args or {}, value), at=self.ledger.time + dt)

    def advance(self, items, voters=2):
        inp = ExecutionInput(self.tsc.latest(), self.tree, Batch(tuple(items)), self.tsc.unsolved_deposits())
        out = execute(inp)
        qc = aggregate_qc([make_vote(e, out, inp) for e in self.enclaves[:voters]], 1, self.msc.public_keys())
        args = {"state": out.state, "qc": qc, "locks": out.effects.locks, "refunds": out.effects.refunds}
        r = self.call(self.op, "UpdateState", args)
        if r.ok:
            self.tree = out.tree
        return r, out, qc


@pytest.fixture
def ru():
    return Rollup()


def test_register_rejects_bad_quotes(ru):
    e = ru.enclaves[0]
    assert ru.call(ru.op, "Register", {"quote": tee.attest(e), "pk": e.public_key}).code == "E_DUPLICATE"
    other = tee.install(PROGRAM_HASH, b"\x09" * 32)
    assert ru.call(ru.op, "Register", {"quote": tee.attest(other), "pk": e.public_key}).code == "E_QUOTE"
    wrong_prog = tee.install(b"\x00" * 32, b"\x0a" * 32)
    r = ru.call(ru.op, "Register", {"quote": tee.attest(wrong_prog), "pk": wrong_prog.public_key})
    assert r.code == "E_QUOTE"


def test_deposit_issue_transfer_burn(ru):
    r = ru.call(ALICE, "Deposit", value=500)
    dep = r.result
    assert ru.tsc.escrow == 500 and ru.ledger.balance(ALICE.public_key) == 9_500
    r, out, _ = ru.advance([IssueRecord(dep, ALICE.public_key, 500)])
    assert r.ok and r.events[0].data["locks"] == [dep]
    assert ru.tsc.deposits[dep].solved
    assert ru.call(ALICE, "RefundDeposit", {"id": dep}, dt=TAU + 5).code == "E_SOLVED"
    r, _, _ = ru.advance([RollupTx.create(ALICE, BURN_ADDRESS, 200, 0)])
    assert r.ok and ru.tsc.escrow == 300
    assert ru.ledger.balance(ALICE.public_key) == 9_700


def test_update_state_requirements(ru):
    inp = ExecutionInput(ru.tsc.latest(), ru.tree, Batch(), {})
    out = execute(inp)
    votes = [make_vote(e, out, inp) for e in ru.enclaves[:2]]
    qc = aggregate_qc(votes, 1, ru.msc.public_keys())
    # insufficient quorum
    thin = type(qc)(qc.digest, qc.votes[:1])
    assert ru.call(ru.op, "UpdateState", {"state": out.state, "qc": thin}).code == "E_QC"
    # QC over different side effects
    r = ru.call(ru.op, "UpdateState", {"state": out.state, "qc": qc, "refunds": ((ALICE.public_key, 1),)})
    assert r.code == "E_QC"
    assert ru.call(ru.op, "UpdateState", {"state": out.state, "qc": qc}).ok
    assert ru.call(ru.op, "UpdateState", {"state": out.state, "qc": qc}).code == "E_HEIGHT"


def test_lock_of_refunded_deposit_rejected(ru):
    dep = ru.call(ALICE, "Deposit", value=50).result
    assert ru.call(ALICE, "RefundDeposit", {"id": dep}, dt=TAU / 2).code == "E_TIMER"
    assert ru.call(ALICE, "RefundDeposit", {"id": dep}, dt=TAU).ok
    assert ru.call(ALICE, "RefundDeposit", {"id": dep}).code == "E_REFUNDED"
    # the enclave no longer sees it as unsolved, so the issue is skipped
    r, out, _ = ru.advance([IssueRecord(dep, ALICE.public_key, 50)])
    assert r.ok and out.effects.locks == ()


def _challenge_flow(ru, executed_before: bool):
    dep = ru.call(ALICE, "Deposit", value=100).result
    ru.advance([IssueRecord(dep, ALICE.public_key, 100)])
    tx = RollupTx.create(ALICE, BOB.public_key, 10, 0)
    if executed_before:
        r, out, qc = ru.advance([tx])
        cid = ru.call(ALICE, "StartChallenge", {"tx": tx}, 10).result
    else:
        cid = ru.call(ALICE, "StartChallenge", {"tx": tx}, 10).result
        r, out, qc = ru.advance([tx])
    batch = Batch((tx,))
    assert ru.call(ALICE, "StartChallenge", {"tx": tx}, 5).code == "E_PLEDGE"
    res = ru.call(ru.op, "ResolveChallenge", {"id": cid, "height": out.state.height, "qc": qc, "batch": batch})
    return res


def test_challenge_resolution_returns_pledge(ru):
    before = ru.ledger.balance(ALICE.public_key)
    res = _challenge_flow(ru, executed_before=False)
    assert res.ok and res.result == "returned"
    assert ru.ledger.balance(ALICE.public_key) == before - 100
    assert ru.tsc.pledges == 0


def test_frivolous_challenge_forfeits(ru):
    res = _challenge_flow(ru, executed_before=True)
    assert res.result == "forfeited" and ru.tsc.forfeited == 10


def test_resolve_requires_inclusion(ru):
    tx = RollupTx.create(ALICE, BOB.public_key, 10, 0)
    cid = ru.call(ALICE, "StartChallenge", {"tx": tx}, 10).result
    r, out, qc = ru.advance([])
    res = ru.call(ru.op, "ResolveChallenge", {"id": cid, "height": 1, "qc": qc, "batch": Batch()})
    assert res.code == "E_INCLUSION"
    res = ru.call(ru.op, "ResolveChallenge", {"id": cid, "height": 1, "qc": qc, "batch": Batch((tx,))})
    assert res.code == "E_INCLUSION"


def test_settlement_and_withdraw(ru):
    dep_a = ru.call(ALICE, "Deposit", value=300).result
    dep_b = ru.call(BOB, "Deposit", value=200).result
    ru.advance([IssueRecord(dep_a, ALICE.public_key, 300), IssueRecord(dep_b, BOB.public_key, 200)])
    ru.advance([RollupTx.create(ALICE, BOB.public_key, 50, 0)])
    tx = RollupTx.create(BOB, ALICE.public_key, 1, 0)
    cid = ru.call(BOB, "StartChallenge", {"tx": tx}, 10).result
    assert ru.call(BOB, "SettleRollup", {"id": cid}).code == "E_TIMER"
    assert ru.call(BOB, "SettleRollup", {"id": cid}, dt=TAU + 1).ok
    assert ru.tsc.contract_state == FROZEN
    assert ru.call(ALICE, "Deposit", value=1).code == "E_FROZEN"
    assert ru.advance([])[0].code == "E_FROZEN"

    def withdraw(key, bal, proof_key=None, m=None):
        proof = ru.tree.prove(proof_key or key.public_key)
        args = {"t_addr": key.public_key, "m_addr": m or key.public_key, "balance": bal, "proof": proof,
                "sig": sign_withdraw(key, m or key.public_key, bal)}
        return ru.call(key, "SettleWithdraw", args)

    assert withdraw(ALICE, 251).code == "E_PROOF"
    assert withdraw(ALICE, 250).ok
    assert withdraw(ALICE, 250).code == "E_WITHDRAWN"
    assert withdraw(BOB, 250).ok
    assert ru.tsc.escrow == 0
    assert ru.ledger.total_native() == 30_000


def test_dap_registration_and_audit(ru):
    daps = [gen_keypair(bytes([40 + i]) * 32) for i in range(3)]
    for d in daps:
        ru.ledger.faucet(d.public_key, 1000)
        assert ru.call(d, "DapRegister", {"sig": sign_dap_register(d, 500)}, 500).ok
    assert ru.call(daps[0], "DapRegister", {"sig": sign_dap_register(daps[0], 100)}, 100).code == "E_DUPLICATE"
    ru.advance([])
    st = ru.tsc.states[1]
    rid = ru.call(ru.op, "DapRequest", {"height": 1, "keys": []}).result
    good = AuditResponse(1, Batch(), ())
    assert ru.call(daps[0], "DapRespond", {"id": rid, "response": good}).ok
    assert ru.call(daps[1], "DapRespond", {"id": rid, "response": AuditResponse(0, Batch(), ())}).ok
    assert ru.call(ru.op, "DapAudit", {"id": rid}).code == "E_TIMER"
    r = ru.call(ru.op, "DapAudit", {"id": rid}, dt=700)
    by_dap = dict(zip(r.events[0].data["daps"], r.result))
    assert [by_dap[d.public_key] for d in daps] == [0, 101, 101]
    assert ru.tsc.slashed_pool == 202
    # nobody answers: everyone loses the minimum collateral
    rid = ru.call(ru.op, "DapRequest", {"height": 1, "keys": []}).result
    r = ru.call(ru.op, "DapAudit", {"id": rid}, dt=700)
    assert r.result == [100, 100, 100]
    assert st.txs_hash == Batch().digest()


@given(st.lists(st.integers(0, 1), min_size=1, max_size=6))
def test_slash_rule(x):
    p = DapParams(min_collateral=1000, response_cost=100, surcharge=1)
    s = slash_amounts(x, p)
    for xi, si in zip(x, s):
        if xi:
            assert si == 0
        elif sum(x):
            assert si == 101
        else:
            assert si == 1000


def test_slash_rule_exhaustive_small():
    p = DapParams()
    for m in range(1, 5):
        for x in itertools.product((0, 1), repeat=m):
            s = slash_amounts(list(x), p)
            assert all((si == 0) == bool(xi) for xi, si in zip(x, s))
