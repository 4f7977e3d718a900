"""Acceptance suite: one test per criterion, each timed against its budget."""

import copy
import itertools
import random
from dataclasses import replace
from decimal import Decimal

import pytest

from teerollup import config, tee
from teerollup.adversary import FORGE_STRATEGIES
from teerollup.chain import ChainCall, ChainLedger, GasTable, gas_to_usd
from teerollup.cli import EXIT_VIOLATIONS, main
from teerollup.contracts import AuditResponse, DapParams, deploy, sign_dap_register
from teerollup.core import PROGRAM_HASH, Batch, ExecutionInput, aggregate_qc, execute, genesis, make_vote
from teerollup.crypto import gen_keypair, hash
from teerollup.merkle import AccountTree, MerkleProof, verify_proof
from teerollup.sim import replay, run_scenario
from teerollup.sim.checks import verify_records
from teerollup.sim.trace import loads

from helpers import small

pytestmark = pytest.mark.acceptance


def canned(name, **kw):
    return config.load(config.resolve(name), **kw)


# 1 -------------------------------------------------------------------------------------

TABLE = {
    "Deposit": (48_551, "3.16"),
    "UpdateState": (156_263, "10.16"),
    "StartChallenge": (47_118, "3.06"),
    "ResolveChallenge": (146_618, "9.54"),
    "SettleRollup": (29_078, "1.89"),
    "SettleWithdraw": (124_511, "8.10"),
}


def test_ac1_gas_reproduction(criterion):
    with criterion(1, "gas table and USD conversion", 1.0):
        table = GasTable()
        ledger = ChainLedger(table)
        deploy(ledger, 1)
        sender = gen_keypair(hash(b"gas")).public_key
        for method, (gas, usd) in TABLE.items():
            assert table[method] == gas
            # charged even when the call itself fails
            assert ledger.submit(ChainCall(sender, method, {})).gas_used == gas
            assert abs(gas_to_usd(gas, table) - Decimal(usd)) <= Decimal("0.01")


# 2 -------------------------------------------------------------------------------------


def test_ac2_amortized_fee(criterion):
    with criterion(2, "all_honest amortized UpdateState gas = 78.13/tx", 10.0):
        cfg = canned("all_honest")
        assert cfg.committee.batch_size == 2000
        r = run_scenario(cfg).report
        assert r["amortized_update_gas_per_tx"] == 78.13
        assert r["full_batches"] == r["heights"]


# 3 -------------------------------------------------------------------------------------


def random_forging_config(seed: int):
    rng = random.Random(seed)
    n = rng.randint(4, 20)
    f = rng.randint(1, (n - 1) // 2)
    forgers = rng.sample(range(n), f)
    seqs = [{"index": i, "behavior": "forger", "compromised": True,
             "forge_strategy": rng.choice(FORGE_STRATEGIES + ("random",))} for i in forgers]
    return small(seed=seed, n=n, f=f, clients=4, transfers=6, batch=4,
                 max_time=60.0, adversary={"sequencers": seqs})


def test_ac3_safety_under_f_forgers(criterion):
    with criterion(3, "200 runs with f forging enclaves: no accepted state deviates from the oracle", 300.0):
        forged_proposals = 0
        for seed in range(200):
            res = run_scenario(random_forging_config(seed))
            records = loads(res.trace_text())
            forged_proposals += sum(1 for r in records if r["kind"] == "proposal" and r["forged"])
            violations = verify_records(records)
            assert violations == [], (seed, violations)
            assert res.breach is None
        # the adversary must actually have tried
        assert forged_proposals > 200


# 4 -------------------------------------------------------------------------------------


def test_ac4_redeemability_under_censorship(criterion):
    with criterion(4, "censorship: challenge freezes after tau, withdrawals drain escrow", 30.0):
        res = run_scenario(canned("censorship_settlement"))
        r, tsc = res.report, res.sim.tsc
        s = r["settlement"]
        assert r["finalized_txs"] == 0
        assert s["contract_state"] == "Frozen"
        start = min(c["start"] for c in r["challenges"])
        assert s["frozen_at"] - start > tsc.tau
        final = res.sim.daps[0].store[tsc.height].tree
        funded = {a for a, b, _ in final.items() if b > 0}
        assert funded and tsc.withdrawn == funded
        assert s["withdrawals"] == len(funded)
        assert s["payouts"] == s["deposits"] - s["deposit_refunds"] - s["burn_refunds"]
        assert s["escrow_end"] == 0 and tsc.escrow == 0


# 5 -------------------------------------------------------------------------------------


def random_challenge_config(seed: int):
    rng = random.Random(10_000 + seed)
    n = rng.randint(4, 10)
    f = rng.randint(1, (n - 1) // 2)
    honest = rng.randint(1, n)
    order = rng.sample(range(n), n)
    seqs = []
    voters = honest
    for i in order[honest:]:
        kind = rng.choice(["censor", "silent", "crash", "forger", "withhold"])
        compromised = sum(s.get("compromised", False) for s in seqs)
        if kind == "forger" and compromised >= f:
            kind = "censor"
        if kind in ("silent", "crash", "forger") and voters < f + 1:
            kind = "censor"
        if kind == "censor":
            seqs.append({"index": i, "behavior": "censor"})
            voters += 1
        elif kind == "withhold":
            seqs.append({"index": i, "withhold_metadata": True})
            voters += 1
        elif kind == "silent":
            seqs.append({"index": i, "behavior": "silent"})
        elif kind == "crash":
            seqs.append({"index": i, "crash_at": round(rng.uniform(0, 20), 2)})
        else:
            seqs.append({"index": i, "behavior": "forger", "compromised": True})
    cfg = small(seed=seed, n=n, f=f, clients=5, transfers=6, batch=4, max_time=150.0,
                chain={"challenge_timeout": 60.0},
                workload={"direct_challenges": rng.randint(1, 2), "challenge_at": rng.uniform(5, 40)},
                adversary={"sequencers": seqs})
    return cfg, voters


def test_ac5_challenges_resolve(criterion):
    with criterion(5, "50 profiles with an honest node: every challenge resolves in time, pledge returned", 60.0):
        for seed in range(50):
            cfg, voters = random_challenge_config(seed)
            assert voters >= cfg.committee.f + 1
            res = run_scenario(cfg)
            rows = res.report["challenges"]
            assert len(rows) == cfg.workload.direct_challenges, seed
            for row in rows:
                assert row["within_timeout"] and row["pledge"] == "returned", (seed, row)
            assert res.report["settlement"]["contract_state"] == "Active"
            assert verify_records(loads(res.trace_text())) == []


# 6 -------------------------------------------------------------------------------------


def piecewise(x, c, w, eps):
    total = sum(x)
    return [0 if xi == 1 else (w + eps if total - xi >= 1 else c) for xi in x]


def test_ac6_slashing_oracle(criterion):
    with criterion(6, "dap_audit equals the piecewise slash rule on all 2^m vectors, m <= 4", 1.0):
        params = DapParams(min_collateral=1000, response_cost=100, surcharge=1, response_timeout=10.0)
        branches = set()
        for m in range(1, 5):
            ledger = ChainLedger()
            msc, tsc = deploy(ledger, 0, dap_params=params, genesis=genesis(8))
            e = tee.install(PROGRAM_HASH, bytes([m]) * 32)
            op = gen_keypair(hash(b"op"))
            ledger.submit(ChainCall(op.public_key, "Register", {"quote": tee.attest(e), "pk": e.public_key}))
            inp = ExecutionInput(tsc.latest(), AccountTree(8), Batch(), {})
            out = execute(inp)
            qc = aggregate_qc([make_vote(e, out, inp)], 0, msc.public_keys())
            ledger.submit(ChainCall(op.public_key, "UpdateState", {"state": out.state, "qc": qc}))
            daps = [gen_keypair(hash(bytes([m, j]))) for j in range(m)]
            for d in daps:
                ledger.faucet(d.public_key, 10**9)
                ledger.submit(ChainCall(d.public_key, "DapRegister", {"sig": sign_dap_register(d, 10**8)}, 10**8))
            by_addr = {d.public_key: d for d in daps}
            for x in itertools.product((0, 1), repeat=m):
                rid = ledger.submit(ChainCall(op.public_key, "DapRequest", {"height": 1, "keys": []})).result
                order = tsc.audits[rid].daps
                for addr, xi in zip(order, x):
                    # a wrong-height answer is an invalid response
                    resp = AuditResponse(1 if xi else 0, Batch(), ())
                    ledger.submit(ChainCall(by_addr[addr].public_key, "DapRespond", {"id": rid, "response": resp}))
                r = ledger.submit(ChainCall(op.public_key, "DapAudit", {"id": rid}), at=ledger.time + 11)
                assert r.ok
                assert r.events[0].data["responses"] == list(x)
                assert r.result == piecewise(list(x), 1000, 100, 1)
                branches.add(sum(x) >= 1)
        assert branches == {True, False}


# 7 -------------------------------------------------------------------------------------


def mutate(proof: MerkleProof, rng: random.Random, other_keys: list[bytes]) -> MerkleProof:
    kind = rng.randrange(7)
    path = list(proof.path)
    if kind == 0:
        i = rng.randrange(len(path))
        sib = bytearray(path[i][0])
        sib[rng.randrange(32)] ^= 1 << rng.randrange(8)
        path[i] = (bytes(sib), path[i][1])
        return replace(proof, path=tuple(path))
    if kind == 1:
        return replace(proof, value=proof.value + rng.choice([-1, 1, 7, 10**6]) if proof.value else proof.value + 1)
    if kind == 2:
        return replace(proof, nonce=proof.nonce + rng.randint(1, 3))
    if kind == 3:
        i = rng.randrange(len(path))
        path[i] = (path[i][0], 1 - path[i][1])
        return replace(proof, path=tuple(path))
    if kind == 4:
        i, j = rng.sample(range(len(path)), 2)
        if path[i][0] == path[j][0]:
            return replace(proof, value=proof.value + 1)
        path[i], path[j] = (path[j][0], path[i][1]), (path[i][0], path[j][1])
        return replace(proof, path=tuple(path))
    if kind == 5:
        return replace(proof, key=rng.choice(other_keys))
    return replace(proof, path=tuple(path[:-1]) if rng.random() < 0.5 else tuple(path) + ((bytes(32), 0),))


def test_ac7_merkle_soundness_completeness(criterion):
    with criterion(7, "10^4 proof mutations on trees of <= 64 accounts", 30.0):
        rng = random.Random(7)
        false_accepts = false_rejects = attempts = 0
        while attempts < 10_000:
            size = rng.randint(1, 64)
            keys = [gen_keypair(hash(rng.randbytes(32))).public_key for _ in range(size)]
            tree = AccountTree(32)
            for k in keys:
                tree.set_balance(k, rng.randint(1, 10**6), rng.randint(0, 5))
            root = tree.root()
            absent = gen_keypair(hash(rng.randbytes(32))).public_key
            for k in rng.sample(keys, min(len(keys), 8)) + [absent]:
                honest = tree.prove(k)
                if not verify_proof(honest, root):
                    false_rejects += 1
                for _ in range(20):
                    bad = mutate(honest, rng, keys + [absent])
                    attempts += 1
                    claim_true = tree.get(bad.key) == (bad.value, bad.nonce) and bad.path == tree.prove(bad.key).path
                    if verify_proof(bad, root) and not claim_true:
                        false_accepts += 1
        assert (false_accepts, false_rejects) == (0, 0)


# 8 -------------------------------------------------------------------------------------


def _variant(base, **changes):
    cfg = copy.deepcopy(base)
    for key, value in changes.items():
        section, attr = key.split("__")
        setattr(getattr(cfg, section), attr, value)
    return cfg.validate()


def test_ac8_performance_trends(criterion):
    with criterion(8, "throughput grows with batch size, latency grows with n and with WAN", 120.0):
        base = canned("all_honest")
        tput = [run_scenario(_variant(base, committee__batch_size=b)).report["throughput_tps"]
                for b in (500, 1000, 2000)]
        assert tput[2] > tput[1] > tput[0]
        lat = {n: run_scenario(_variant(base, committee__n=n, committee__f=min(3, (n - 1) // 2)))
               .report["latency"]["mean"] for n in (5, 20)}
        assert lat[20] > lat[5]
        lan = run_scenario(_variant(base, network__preset="lan")).report["latency"]["mean"]
        wan = run_scenario(_variant(base, network__preset="wan")).report["latency"]["mean"]
        assert wan > lan


# 9 -------------------------------------------------------------------------------------


def test_ac9_determinism(criterion, tmp_path):
    with criterion(9, "same seed gives byte-identical traces; replay reproduces the report", 60.0):
        for name in config.canned():
            paths = []
            for k in range(2):
                p = tmp_path / f"{name}-{k}.jsonl"
                res = run_scenario(canned(name, unsafe_exceed_f=True), trace_path=p)
                paths.append(p)
            assert paths[0].read_bytes() == paths[1].read_bytes(), name
            assert replay(paths[0]) == res.report, name


# 10 ------------------------------------------------------------------------------------


def test_ac10_assumption_boundary(criterion, tmp_path, capsys):
    with criterion(10, "f+1 colluding enclaves get a forged state accepted and verify-trace flags it", 30.0):
        cfg = canned("exceed_f_unsafe", unsafe_exceed_f=True)
        assert len(cfg.adversary.compromised()) == cfg.committee.f + 1
        trace = tmp_path / "trace.jsonl"
        res = run_scenario(cfg, trace_path=trace)
        records = loads(res.trace_text())
        forged = {r["digest"] for r in records if r["kind"] == "proposal" and r["forged"]}
        accepted = {r["digest"] for r in records
                    if r["kind"] == "receipt" and r["method"] == "UpdateState" and r["ok"]}
        assert forged & accepted
        assert main(["verify-trace", str(trace)]) == EXIT_VIOLATIONS
        assert "SAFETY VIOLATION" in capsys.readouterr().out
