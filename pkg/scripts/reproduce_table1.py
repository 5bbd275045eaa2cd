"""Estimate the case-5 line admittances with designed inputs and print a line table.

Usage: python3 scripts/reproduce_table1.py [--seeds 1,2,3] [--iters 100]

With several seeds the estimate shown is the per-parameter median.
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from oedgrid import default_config, run
from oedgrid.estimator import mre


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="1", help="comma-separated noise seeds")
    ap.add_argument("--iters", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    cfg = default_config(max_iters=args.iters)
    seeds = [int(s) for s in args.seeds.split(",")]
    finals = []
    for s in seeds:
        res = run(replace(cfg, seed=s))
        f = res.final
        print(f"seed {s}: {len(res.records)} iterations, mre_g {f.mre_g:.4f}, mre_b {f.mre_b:.5f}, "
              f"trace {f.total_variance:.3g}")
        finals.append(f.y)

    y = np.median(finals, axis=0)
    y_true = cfg.truth()
    net = cfg.network
    print(f"\n{'line':>7} {'g true':>9} {'g est':>9} {'b true':>10} {'b est':>10}")
    for j, (k, l) in enumerate(net.lines):
        name = f"({net.bus_ids[k]},{net.bus_ids[l]})"
        print(f"{name:>7} {y_true[2*j]:9.3f} {y[2*j]:9.3f} {y_true[2*j+1]:10.3f} {y[2*j+1]:10.3f}")
    mg, mb = mre(y, y_true)
    print(f"\nMRE_g {100*mg:.2f}%  MRE_b {100*mb:.4f}%  max |error| {np.abs(y - y_true).max():.3f}")


if __name__ == "__main__":
    main()
