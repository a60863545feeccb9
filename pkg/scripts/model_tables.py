"""Print the analytical tables behind the split-time plots.

Mean split time over (K, p) at N=5, CDF values at a few steps for
N in {5, 15, 25}, variance against N, and t_in against K. Everything is
analytical, so the script finishes in seconds.

    python scripts/model_tables.py [--out-dir DIR]
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from raftsplit import split_model as sm
from raftsplit.split_model import ModelParams


def mean_table():
    rows = []
    for k in (2, 3, 4, 5, 6):
        for p in (0.1, 0.2, 0.3, 0.4, 0.5):
            d = sm.analyze(ModelParams(5, p, (k,))).binomial
            rows.append({"K": k, "p": p, "mean_steps": d.mean_steps, "mean_ms": d.mean_steps * 50,
                         "std_steps": np.sqrt(d.variance_steps)})
    return rows


def crossing_table(k=6, p=0.1, sizes=(5, 15, 25)):
    t_c = sm.expected_time_to_candidate(sm.build_single_timeout_chain(k, p))
    steps = sorted({k, 2 * k, int(t_c / 4), int(t_c / 2), int(t_c), int(2 * t_c), int(4 * t_c)})
    curve = sm.absorption_curve_recurrence(k, p, steps[-1]).values
    rows = []
    for n in steps:
        row = {"step": n}
        for size in sizes:
            row[f"cdf_N{size}"] = sm.binomial_split_cdf(curve[[n]], size)[0]
        rows.append(row)
    return rows


def variance_table(k=3, p=0.3):
    rows = []
    for n in range(5, 26, 2):
        d = sm.analyze(ModelParams(n, p, (k,))).binomial
        rows.append({"N": n, "mean_steps": d.mean_steps, "variance_steps": d.variance_steps})
    return rows


def interval_table(max_k=20):
    rows = []
    for k in range(1, max_k + 1):
        row = {"K": k}
        for p in (0.1, 0.3, 0.5):
            row[f"t_in_p{p}"] = sm.mean_heartbeat_interval(sm.build_single_timeout_chain(k, p))
        rows.append(row)
    return rows


def emit(name, rows, out_dir):
    print(f"# {name}")
    cols = list(rows[0])
    print(",".join(cols))
    for r in rows:
        print(",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    print()
    if out_dir:
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, help="also write each table as CSV here")
    args = ap.parse_args()
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
    emit("mean_vs_timeout", mean_table(), args.out_dir)
    emit("cdf_crossing", crossing_table(), args.out_dir)
    emit("variance_vs_size", variance_table(), args.out_dir)
    emit("receipt_interval", interval_table(), args.out_dir)


if __name__ == "__main__":
    main()
