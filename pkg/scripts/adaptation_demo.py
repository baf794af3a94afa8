"""Resist pulse with and without trajectory adaptation.

The subject resists extension between 5 s and 8 s.  With adaptation the
reference freezes while the safety likelihood exceeds the threshold and the
trial runs longer by the frozen time.

    python3 scripts/adaptation_demo.py --thresholds 0.3 0.5 0.8
"""
import argparse

import numpy as np

from aanexo.harness import AdaptationConfig, TrialConfig, compute_metrics, export, run_trial
from aanexo.plant import Condition, InvolvementCondition


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subject", default="S1")
    ap.add_argument("--window", nargs=2, type=float, default=[5.0, 8.0])
    ap.add_argument("--thresholds", nargs="+", type=float, default=[0.5, 0.8])
    ap.add_argument("--duration", type=float, default=12.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="directory for the trial CSVs")
    args = ap.parse_args()

    pulse = InvolvementCondition(Condition.ER, window=tuple(args.window))
    print(f"{'R_th':>6}{'adapt':>7}{'frozen s':>10}{'done at':>9}{'int mu_S>R_th':>15}"
          f"{'max|dtheta_r|':>15}{'max|tau_e|':>12}")
    for rth in args.thresholds:
        for on in (False, True):
            cfg = TrialConfig(duration=args.duration, adaptation=AdaptationConfig(enabled=on, threshold=rth))
            rec = run_trial(args.subject, pulse, cfg, seed=args.seed)
            dt = cfg.dt
            excess = np.clip(rec["mu_S"] - rth, 0, None).sum() * dt
            print(f"{rth:6.2f}{str(on):>7}{rec['frozen'].sum() * dt:10.3f}{rec.completion_time:9.3f}"
                  f"{excess:15.4f}{np.abs(np.diff(rec['theta_r'])).max():15.5f}"
                  f"{np.abs(rec['tau_e']).max():12.2f}")
            if args.out:
                name = f"{args.subject}_pulse_rth{rth:g}_{'adapt' if on else 'plain'}"
                export(rec, compute_metrics(rec), f"{args.out}/{name}")


if __name__ == "__main__":
    main()
