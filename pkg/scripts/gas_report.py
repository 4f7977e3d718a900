#!/usr/bin/env python3
"""Per-method gas and USD for every canned scenario, plus amortized UpdateState cost."""

import argparse

from teerollup import config
from teerollup.sim import run_scenario


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("scenarios", nargs="*", help="defaults to every canned scenario")
    args = p.parse_args(argv)

    for name in args.scenarios or config.canned():
        cfg = config.load(config.resolve(name), unsafe_exceed_f=True)
        r = run_scenario(cfg).report
        print(f"== {cfg.name} ({r['batch_items']} items in {r['heights']} batches)")
        for method, g in r["gas"].items():
            flag = "" if g["calibrated"] else "  (uncalibrated)"
            print(f"  {method:<18}{g['calls']:>6} calls {g['gas']:>12,} gas {g['usd']:>10} USD{flag}")
        print(f"  amortized UpdateState: {r['amortized_update_gas_per_tx']} gas/tx, "
              f"{r['amortized_update_usd_per_tx']} USD/tx")


if __name__ == "__main__":
    main()
