#!/usr/bin/env python3
"""Sweep batch size, committee size and network preset over one base scenario.

Prints one CSV row per run: knob, value, throughput, mean and p99 latency.
"""

import argparse
import copy
import csv
import sys

from teerollup import config
from teerollup.sim import run_scenario


def variant(base, section, attr, value):
    cfg = copy.deepcopy(base)
    setattr(getattr(cfg, section), attr, value)
    if (section, attr) == ("committee", "n"):
        cfg.committee.f = min(cfg.committee.f, (value - 1) // 2)
    return cfg.validate()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scenario", default="all_honest")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batches", type=int, nargs="+", default=[250, 500, 1000, 2000])
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 5, 10, 20])
    args = p.parse_args(argv)

    base = config.load(config.resolve(args.scenario), seed=args.seed)
    runs = [("committee", "batch_size", b) for b in args.batches]
    runs += [("committee", "n", n) for n in args.sizes]
    runs += [("network", "preset", x) for x in ("lan", "wan")]

    out = csv.writer(sys.stdout)
    out.writerow(["knob", "value", "throughput_tps", "latency_mean", "latency_p99", "heights"])
    for section, attr, value in runs:
        r = run_scenario(variant(base, section, attr, value)).report
        out.writerow([attr, value, f"{r['throughput_tps']:.2f}", f"{r['latency']['mean']:.4f}",
                      f"{r['latency']['p99']:.4f}", r["heights"]])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
