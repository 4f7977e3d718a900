#!/usr/bin/env python3
"""Randomized safety check: runs with up to f forging enclaves, each trace re-verified.

Exits non-zero if any accepted state deviates from the independent interpreter.
"""

import argparse
import random
import sys

from teerollup import config
from teerollup.adversary import FORGE_STRATEGIES
from teerollup.sim import run_scenario
from teerollup.sim.checks import verify_records
from teerollup.sim.trace import loads


def random_config(seed: int, max_n: int):
    rng = random.Random(seed)
    n = rng.randint(4, max_n)
    f = rng.randint(1, (n - 1) // 2)
    seqs = [{"index": i, "behavior": "forger", "compromised": True,
             "forge_strategy": rng.choice(FORGE_STRATEGIES + ("random",))} for i in rng.sample(range(n), f)]
    return config.from_dict({
        "name": f"forgers-{seed}",
        "seed": seed,
        "max_time": 60.0,
        "tree_depth": 16,
        "committee": {"n": n, "f": f, "batch_size": 4, "stagger": 1.0, "max_batch_wait": 0.5},
        "chain": {"block_delay": 2.0},
        "dap": {"m": 1, "collateral": 1000, "min_collateral": 1000},
        "workload": {"clients": 4, "deposit_value": 100, "transfers": 6, "transfer_start": 3.0, "rate": 20.0},
        "adversary": {"sequencers": seqs},
    })


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--max-n", type=int, default=20)
    args = p.parse_args(argv)
    bad = 0
    forged = 0
    for seed in range(args.runs):
        res = run_scenario(random_config(seed, args.max_n))
        records = loads(res.trace_text())
        forged += sum(1 for r in records if r["kind"] == "proposal" and r["forged"])
        violations = verify_records(records)
        if violations:
            bad += 1
            print(f"seed {seed}: {violations[0]}")
    print(f"{args.runs} runs, {forged} forged proposals, {bad} runs with violations")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
