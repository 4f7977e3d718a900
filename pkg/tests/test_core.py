import random

import pytest
from hypothesis import given, settings, strategies as st

from teerollup import tee
from teerollup.core import (
    BURN_ADDRESS,
    PROGRAM_HASH,
    Batch,
    ExecutionInput,
    IssueRecord,
    QuorumCertificate,
    QuorumError,
    RollupState,
    RollupTx,
    SideEffects,
    StateMismatch,
    VoteRefused,
    aggregate_qc,
    certified_digest,
    execute,
    forge_vote,
    genesis,
    make_vote,
    verify_chain,
    verify_qc,
)
from teerollup.crypto import gen_keypair, hash
from teerollup.merkle import AccountTree
from teerollup.sim.checks import Oracle

DEPTH = 32
KEYS = [gen_keypair(hash(b"client" + bytes([i]))) for i in range(8)]
ADDR = [k.public_key for k in KEYS]


def funded(balances=None, depth=DEPTH):
    tree = AccountTree.from_balances(balances or {a: 100 for a in ADDR}, depth)
    state = RollupState(0, bytes(32), tree.root(), Batch().digest())
    return state, tree


def run(items, deposits=None, balances=None):
    state, tree = funded(balances)
    return execute(ExecutionInput(state, tree, Batch(tuple(items)), deposits or {}))


def test_transfer_moves_value_and_bumps_nonce():
    out = run([RollupTx.create(KEYS[0], ADDR[1], 30, 0)])
    assert out.tree.get(ADDR[0]) == (70, 1)
    assert out.tree.get(ADDR[1]) == (130, 0)
    assert out.rejected == ()
    assert out.state.height == 1


@pytest.mark.parametrize(
    "tx, reason",
    [
        (RollupTx.create(KEYS[0], ADDR[1], 30, 1), "bad-nonce"),
        (RollupTx.create(KEYS[0], ADDR[1], 101, 0), "insufficient-balance"),
        (RollupTx.create(KEYS[0], ADDR[1], 0, 0), "non-positive-value"),
        (RollupTx(ADDR[0], ADDR[1], 5, 0, b"\x00" * 64), "bad-signature"),
        (RollupTx(BURN_ADDRESS, ADDR[1], 5, 0, b""), "burn-sender"),
    ],
)
def test_invalid_transfers_are_skipped(tx, reason):
    out = run([tx])
    assert out.rejected == ((0, reason),)
    assert out.tree.root() == funded()[1].root()


def test_burn_emits_refund():
    out = run([RollupTx.create(KEYS[2], BURN_ADDRESS, 40, 0)])
    assert out.effects.refunds == ((ADDR[2], 40),)
    assert out.tree.balance(ADDR[2]) == 60


def test_issue_requires_known_unsolved_deposit():
    dep = hash(b"dep")
    good = IssueRecord(dep, ADDR[3], 50)
    out = run([good, good, IssueRecord(hash(b"x"), ADDR[3], 1)], deposits={dep: (ADDR[3], 50)})
    assert out.effects.locks == ((dep, 50),)
    assert out.rejected == ((1, "duplicate-deposit"), (2, "unknown-deposit"))
    assert out.tree.balance(ADDR[3]) == 150
    wrong_value = run([IssueRecord(dep, ADDR[3], 51)], deposits={dep: (ADDR[3], 50)})
    assert wrong_value.rejected == ((0, "unknown-deposit"),)


def test_parent_tree_must_match():
    state, tree = funded()
    tree.set_balance(ADDR[0], 1)
    with pytest.raises(StateMismatch):
        execute(ExecutionInput(state, tree, Batch(), {}))


def test_state_chain_links():
    out1 = run([RollupTx.create(KEYS[0], ADDR[1], 1, 0)])
    out2 = execute(ExecutionInput(out1.state, out1.tree, Batch(), {}))
    g = funded()[0]
    assert verify_chain([g, out1.state, out2.state])
    assert not verify_chain([g, out2.state])
    assert RollupState.decode(out2.state.encode()) == out2.state


def test_batch_and_effects_roundtrip():
    b = Batch((IssueRecord(hash(b"d"), ADDR[0], 3), RollupTx.create(KEYS[1], ADDR[0], 2, 0)))
    assert Batch.decode(b.encode()) == b
    fx = SideEffects(((hash(b"d"), 3),), ((ADDR[1], 2),))
    assert SideEffects.decode(fx.encode()) == fx
    with pytest.raises(ValueError):
        Batch.decode(b.encode() + b"\x00")


def random_batch(rng: random.Random, n: int) -> tuple[list, dict]:
    nonces = [0] * len(KEYS)
    items, deposits = [], {}
    for i in range(n):
        r = rng.random()
        if r < 0.1:
            dep = hash(b"dep" + i.to_bytes(4, "big"))
            a = rng.choice(ADDR)
            deposits[dep] = (a, rng.randint(1, 50))
            items.append(IssueRecord(dep, a, deposits[dep][1] if rng.random() < 0.8 else 999))
            continue
        s = rng.randrange(len(KEYS))
        receiver = BURN_ADDRESS if rng.random() < 0.1 else rng.choice(ADDR)
        nonce = nonces[s] if rng.random() < 0.9 else nonces[s] + rng.choice([-1, 1, 5])
        value = rng.choice([rng.randint(1, 40), 0, 500])
        tx = RollupTx.create(KEYS[s], receiver, value, max(nonce, 0))
        if rng.random() < 0.05:
            tx = RollupTx(tx.sender, tx.receiver, tx.value, tx.nonce, bytes(64))
        if tx.nonce == nonces[s]:
            nonces[s] += 1
        items.append(tx)
    return items, deposits


@pytest.mark.parametrize("seed", range(5))
def test_execute_agrees_with_independent_interpreter(seed):
    rng = random.Random(seed)
    items, deposits = random_batch(rng, 200)
    state, tree = funded()
    out = execute(ExecutionInput(state, tree, Batch(tuple(items)), deposits))
    oracle = Oracle(DEPTH, state.encode())
    oracle.accounts = {a: (100, 0) for a in ADDR}
    oracle.unsolved = dict(deposits)
    enc, locks, refunds = oracle.apply(Batch(tuple(items)).encode())
    assert enc == out.state.encode()
    assert locks == [[d.hex(), v] for d, v in out.effects.locks]
    assert refunds == [[a.hex(), v] for a, v in out.effects.refunds]


# -- votes and quorum certificates --------------------------------------------------

ENCLAVES = [tee.install(PROGRAM_HASH, bytes([i]) * 32) for i in range(4)]
REGISTRY = [e.public_key for e in ENCLAVES]


def proposal():
    state, tree = funded()
    inp = ExecutionInput(state, tree, Batch((RollupTx.create(KEYS[0], ADDR[1], 5, 0),)), {})
    return inp, execute(inp)


def test_honest_votes_form_a_qc():
    inp, out = proposal()
    votes = [make_vote(e, out, inp) for e in ENCLAVES[:2]]
    qc = aggregate_qc(votes, 1, REGISTRY)
    assert verify_qc(qc, 1, REGISTRY)
    assert not verify_qc(qc, 2, REGISTRY)
    assert QuorumCertificate.decode(qc.encode()) == qc


def test_vote_refused_for_wrong_proposal():
    inp, out = proposal()
    forged = RollupState(out.state.height, out.state.prev_hash, hash(b"x"), out.state.txs_hash)
    with pytest.raises(VoteRefused):
        make_vote(ENCLAVES[0], (forged, out.effects), inp)
    # effects are certified too
    with pytest.raises(VoteRefused):
        make_vote(ENCLAVES[0], (out.state, SideEffects((), ((ADDR[0], 1),))), inp)


def test_qc_rejects_duplicates_outsiders_and_mixed_digests():
    inp, out = proposal()
    v = make_vote(ENCLAVES[0], out, inp)
    assert not verify_qc(QuorumCertificate(v.digest, (v, v)), 1, REGISTRY)
    outsider = forge_vote(gen_keypair(b"\x09" * 32), v.digest)
    assert not verify_qc(QuorumCertificate(v.digest, (v, outsider)), 1, REGISTRY)
    other = forge_vote(gen_keypair(b"\x09" * 32), hash(b"other"))
    with pytest.raises(QuorumError):
        aggregate_qc([v, other], 0, REGISTRY + [other.voter])
    with pytest.raises(QuorumError):
        aggregate_qc([v], 1, REGISTRY)


def test_compromised_key_votes_without_reexecution():
    e = tee.install(PROGRAM_HASH, b"\x07" * 32, compromised=True)
    key = tee.leak_secret(e)
    d = certified_digest(genesis(8), SideEffects())
    assert forge_vote(key, d).valid()
    with pytest.raises(tee.ConfidentialityError):
        tee.leak_secret(ENCLAVES[0])


@settings(max_examples=25)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
def test_qc_counts_distinct_registered_voters(picks):
    inp, out = proposal()
    votes = [make_vote(ENCLAVES[i], out, inp) for i in picks]
    distinct = len(set(picks))
    for f in range(4):
        if distinct >= f + 1:
            assert verify_qc(aggregate_qc(votes, f, REGISTRY), f, REGISTRY)
        else:
            with pytest.raises(QuorumError):
                aggregate_qc(votes, f, REGISTRY)
