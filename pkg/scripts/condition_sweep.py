"""Closed-loop trials over subjects x conditions x seeds, summarised per phase.

Prints median |tracking error|, RMS likelihoods and the human torque ratio
for every (subject, condition, phase), pooled over seeds as a median, and
writes the per-trial numbers to a CSV.

    python3 scripts/condition_sweep.py --seeds 0 1 2 --out runs/sweep.csv
"""
import argparse
import csv
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from aanexo.harness import TrialConfig, compute_metrics, run_trial

FIELDS = ("abs_error_median", "error_median", "rms_mu_A", "rms_mu_S", "human_torque_ratio")


def one(job):
    subject, condition, seed, duration = job
    t0 = time.perf_counter()
    rec = run_trial(subject, condition, TrialConfig(duration=duration), seed=seed)
    if rec.error:
        return job, None, rec.error
    met = compute_metrics(rec)
    row = {"seconds": time.perf_counter() - t0, "max_abs_tau_e": met.max_abs_tau_e}
    for ph in ("extension", "flexion"):
        pm = getattr(met, ph)
        row.update({f"{ph[0].upper()}.{f}": getattr(pm, f) for f in FIELDS})
    return job, row, None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", nargs="+", default=["S1", "S2", "S3"])
    ap.add_argument("--conditions", nargs="+", default=["R", "EA", "ER", "FA", "FR"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--duration", type=float, default=24.0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/condition_sweep.csv")
    args = ap.parse_args()

    jobs = [(s, c, k, args.duration) for s in args.subjects for c in args.conditions for k in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    rows = []
    for (s, c, k, _), row, err in results:
        if err:
            print(f"{s} {c} seed {k}: aborted ({err})")
            continue
        rows.append({"subject": s, "condition": c, "seed": k, **row})
    if not rows:
        return
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    print(f"{'subj':5}{'cond':5}{'ph':3}{'|err|':>9}{'err':>9}{'mu_A':>7}{'mu_S':>7}{'R_h':>7}")
    for s in args.subjects:
        for c in args.conditions:
            sel = [r for r in rows if r["subject"] == s and r["condition"] == c]
            if not sel:
                continue
            for ph in "EF":
                med = {f: np.median([r[f"{ph}.{f}"] for r in sel]) for f in FIELDS}
                print(f"{s:5}{c:5}{ph:3}{med['abs_error_median']:9.4f}{med['error_median']:9.4f}"
                      f"{med['rms_mu_A']:7.3f}{med['rms_mu_S']:7.3f}{med['human_torque_ratio']:7.3f}")
    secs = [r["seconds"] for r in rows]
    print(f"# {len(rows)} trials, {np.mean(secs):.1f} s mean / {max(secs):.1f} s max wall time; wrote {out}")


if __name__ == "__main__":
    main()
