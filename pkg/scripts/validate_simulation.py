"""Run the simulator against the analytical model over a small grid.

For each (N, K, p) the script runs lockstep trials, then reports the KS
distance, the mean gap in standard errors, and the empirical heartbeat
statistics (from trials that run until every follower has timed out) next
to their fundamental-matrix values. ``--timed`` adds the
millisecond-resolution simulator, where some disagreement is expected
because randomized timeouts break the lockstep assumption.

    python scripts/validate_simulation.py --trials 5000 --workers 4
"""

import argparse
from dataclasses import replace

from raftsplit import split_model as sm
from raftsplit.raft_sim import Fidelity, SimConfig, empirical_heartbeat_stats, run_batch
from raftsplit.split_model import ModelParams
from raftsplit.stats import empirical_cdf, ks_distance, summarize

GRID = [(5, 3, 0.3), (5, 2, 0.5), (7, 3, 0.4), (9, 4, 0.5), (5, 4, 0.3)]


def validate(n, k, p, trials, seed, workers, fidelity):
    cfg = SimConfig.for_timeout_steps(n, p, (k,), trials=trials, master_seed=seed,
                                      fidelity=fidelity)
    outcomes = run_batch(cfg, workers=workers)
    analysis = sm.analyze(ModelParams(n, p, (k,)))
    d, fm = analysis.binomial, analysis.fundamental
    s = summarize(outcomes)
    # a split cuts trials short and hides slow followers; let every one time out
    hb = empirical_heartbeat_stats(run_batch(replace(cfg, stop_at_split=False), workers=workers))
    return {
        "mode": fidelity.value, "N": n, "K": k, "p": p,
        "ks": ks_distance(empirical_cdf(outcomes), d),
        "mean_sim": s.mean, "mean_model": d.mean_steps,
        "z": (s.mean - d.mean_steps) / s.standard_error,
        "n11_sim": hb.mean_heartbeats_before_candidacy, "n11_model": fm.expected_heartbeats,
        "t_in_sim": hb.mean_receipt_interval_steps, "t_in_model": fm.mean_receipt_interval_steps,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--timed", action="store_true", help="also run the timed simulator")
    args = ap.parse_args()

    modes = [Fidelity.LOCKSTEP] + ([Fidelity.TIMED] if args.timed else [])
    header = ("mode", "N", "K", "p", "ks", "mean_sim", "mean_model", "z",
              "n11_sim", "n11_model", "t_in_sim", "t_in_model")
    print(",".join(header))
    for mode in modes:
        for n, k, p in GRID:
            r = validate(n, k, p, args.trials, args.seed, args.workers, mode)
            print(",".join(f"{r[h]:.4f}" if isinstance(r[h], float) else str(r[h])
                           for h in header), flush=True)


if __name__ == "__main__":
    main()
