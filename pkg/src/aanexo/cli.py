"""Command-line entry point: ``aanexo {identify,calibrate,run,batch,metrics,defaults}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import apply_overrides, flatten, format_value, read_kv, write_kv
from .emg_hte import ConfigurationError, Recording, calibrate_from_recordings
from .harness import (TrialConfig, calibration_recording, compute_metrics, export,
                      load_record, metrics_text, run_trial)
from .plant import (EXO_PARAMS, HUMAN_PARAMS, Condition, InvolvementCondition, PlantParams,
                    subject_profile)
from .sysid import SysIdConfig, fit_params, infer_human_params, run_excitation

SUBJECTS = tuple(HUMAN_PARAMS)
CONDITIONS = tuple(c.value for c in Condition)


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_settings(config_path, sets) -> dict[str, str]:
    """Config-file values, then ``--set`` overrides on top."""
    values = read_kv(config_path) if config_path else {}
    values.update(_parse_sets(sets))
    return values


def _section(values: dict[str, str], prefix: str) -> dict[str, str]:
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def build_trial(subject: str, condition: str, values: dict[str, str], adapt: bool = False,
                rth: float | None = None, pa: float | None = None, ps: float | None = None):
    unknown = [k for k in values if k.partition(".")[0] not in ("trial", "subject", "condition")]
    if unknown:
        raise KeyError(f"unknown config section in {unknown}; use trial., subject. or condition.")
    prof = apply_overrides(subject_profile(subject), _section(values, "subject."))
    cond = apply_overrides(InvolvementCondition(Condition(condition)), _section(values, "condition."))
    trial = apply_overrides(TrialConfig(), _section(values, "trial."))
    adaptation = trial.adaptation
    if adapt:
        adaptation = dataclasses.replace(adaptation, enabled=True)
    if rth is not None:
        adaptation = dataclasses.replace(adaptation, threshold=rth)
    fuzzy = trial.fuzzy
    if pa is not None:
        fuzzy = dataclasses.replace(fuzzy, p_assist=pa)
    if ps is not None:
        fuzzy = dataclasses.replace(fuzzy, p_safety=ps)
    trial = dataclasses.replace(trial, adaptation=adaptation, fuzzy=fuzzy)
    return prof, cond, trial


def _run_one(job):
    subject, condition, seed, values, flags, out_dir = job
    prof, cond, trial = build_trial(subject, condition, values, **flags)
    rec = run_trial(prof, cond, trial, seed=seed)
    metrics = compute_metrics(rec) if rec.error is None else None
    name = f"{subject}_{condition}_seed{seed}"
    paths = export(rec, metrics, Path(out_dir) / name)
    return name, rec.error, metrics.as_dict() if metrics else None, str(paths["csv"])


# --------------------------------------------------------------------------


def cmd_run(args) -> int:
    values = load_settings(args.config, args.set)
    flags = dict(adapt=args.adapt, rth=args.rth, pa=args.pa, ps=args.ps)
    out = Path(args.out) if args.out else Path("runs") / f"{args.subject}_{args.condition}_seed{args.seed}"
    prof, cond, trial = build_trial(args.subject, args.condition, values, **flags)
    rec = run_trial(prof, cond, trial, seed=args.seed)
    metrics = compute_metrics(rec) if rec.error is None else None
    paths = export(rec, metrics, out)
    if rec.error:
        print(f"trial aborted: {rec.error}", file=sys.stderr)
        print(f"partial record: {paths['csv']}", file=sys.stderr)
        return 2
    print(metrics_text(metrics))
    print(f"# wrote {paths['csv']}")
    return 0


def cmd_batch(args) -> int:
    values = load_settings(args.config, args.set)
    flags = dict(adapt=args.adapt, rth=args.rth, pa=args.pa, ps=args.ps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(s, c, seed, values, flags, str(out_dir))
            for s in args.subjects for c in args.conditions for seed in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    keys = None
    rows = []
    failures = 0
    for (subject, condition, seed, *_), (name, error, met, _) in zip(jobs, results):
        if error:
            failures += 1
            print(f"{name}: aborted ({error})", file=sys.stderr)
            continue
        keys = keys or list(met)
        rows.append([subject, condition, seed] + [format_value(met[k]) for k in keys])
        print(f"{name}: E |err| {met['E.abs_error_median']:.4f}  "
              f"F |err| {met['F.abs_error_median']:.4f}")
    if rows:
        with (out_dir / "summary.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "condition", "seed"] + keys)
            w.writerows(rows)
        print(f"# wrote {out_dir / 'summary.csv'}")
    return 1 if failures else 0


def cmd_metrics(args) -> int:
    rec = load_record(args.csv)
    if not rec.meta:
        rec.meta.update({"period": 4.0, "dt": float(np.median(np.diff(rec.data["t"])))})
    print(metrics_text(compute_metrics(rec)))
    return 0


def _plant_from(values: dict[str, str], prefix: str, default: PlantParams) -> PlantParams:
    return apply_overrides(default, _section(values, prefix))


def cmd_identify(args) -> int:
    values = load_settings(args.config, args.set)
    cfg = apply_overrides(SysIdConfig(), _section(values, "sysid."))
    if args.noise is not None:
        cfg = dataclasses.replace(cfg, torque_noise=args.noise)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    exo = _plant_from(values, "exo.", EXO_PARAMS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    exo_data = run_excitation(exo, cfg)
    exo_fit, exo_rep = fit_params(exo_data)
    exo_data.to_csv(out / "exo_dataset.csv")
    report = {f"exo.{k}": v for k, v in dataclasses.asdict(exo_fit).items()}
    report.update({f"exo.fit.{k}": v for k, v in exo_rep.as_dict().items()})

    if args.subject:
        human = _plant_from(values, "human.", HUMAN_PARAMS[args.subject])
        data = run_excitation(exo + human, cfg)
        fit, rep = fit_params(data)
        data.to_csv(out / f"{args.subject}_dataset.csv")
        inferred = infer_human_params(fit, exo_fit)
        report.update({f"combined.{k}": v for k, v in dataclasses.asdict(fit).items()})
        report.update({f"combined.fit.{k}": v for k, v in rep.as_dict().items()})
        report.update({f"human.{k}": v for k, v in
                       zip(("inertia", "damping", "gravity_torque"), inferred.as_tuple())})
        for w in inferred.warnings:
            print(f"warning: {w}", file=sys.stderr)
    write_kv(out / "identified.txt", report, header="least-squares plant identification")
    print("\n".join(f"{k} = {format_value(v)}" for k, v in report.items()))
    print(f"# wrote {out / 'identified.txt'}")
    return 0


def cmd_calibrate(args) -> int:
    if args.synthesize:
        out = Path(args.synthesize)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for i, cond in enumerate(["R"] + list(args.conditions)):
            rec = calibration_recording(args.subject, cond, duration=args.duration, seed=args.seed + i)
            written.append(out / f"{args.subject}_{cond}.csv")
            rec.to_csv(written[-1])
        print(f"# wrote synthetic recordings for {args.subject} under {out}")
        if not args.relaxed:
            args.relaxed, args.active = written[0], written[1:]
    if not args.relaxed or not args.active:
        raise SystemExit("calibrate needs --relaxed and at least one active recording")
    relaxed = Recording.from_csv(args.relaxed)
    active = [Recording.from_csv(p) for p in args.active]
    fit = calibrate_from_recordings(relaxed, active, k1=args.k1, rate=args.rate, period=args.period)
    values = {"hte.b0": fit.model.b0, "hte.a1": fit.model.a1, "hte.a2": fit.model.a2,
              "fit.rmse": fit.rmse, "fit.nrmse": fit.nrmse, "fit.accuracy": fit.accuracy,
              "fit.samples": fit.n, "fit.k1": args.k1}
    write_kv(args.out, values, header="EMG torque model calibration")
    print("\n".join(f"{k} = {format_value(v)}" for k, v in values.items()))
    print(f"# wrote {args.out}")
    return 0


def cmd_defaults(args) -> int:
    values = {}
    values.update(flatten(subject_profile(args.subject), "subject."))
    values.update(flatten(InvolvementCondition(), "condition."))
    values.update(flatten(TrialConfig(), "trial."))
    text = "\n".join(f"{k} = {format_value(v)}" for k, v in values.items())
    print(text)
    return 0


# --------------------------------------------------------------------------


def _add_trial_options(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a setting, e.g. trial.mpc.w_theta=8000 (repeatable)")
    p.add_argument("--adapt", action="store_true", help="enable trajectory adaptation")
    p.add_argument("--rth", type=float, help="resistance threshold for adaptation")
    p.add_argument("--pa", type=float, help="assist penalty p_A")
    p.add_argument("--ps", type=float, help="safety penalty p_S")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aanexo", description="assist-as-needed knee exoskeleton simulation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one closed-loop trial")
    p.add_argument("--subject", choices=SUBJECTS, default="S1")
    p.add_argument("--condition", choices=CONDITIONS, default="R")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path stem (default runs/<subject>_<condition>_seed<N>)")
    _add_trial_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="all subjects x conditions x seeds")
    p.add_argument("--subjects", nargs="+", choices=SUBJECTS, default=list(SUBJECTS))
    p.add_argument("--conditions", nargs="+", choices=CONDITIONS, default=list(CONDITIONS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default="runs/batch")
    _add_trial_options(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("metrics", help="recompute metrics from a trial CSV")
    p.add_argument("csv")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("identify", help="excitation trials and least-squares plant fit")
    p.add_argument("--subject", choices=SUBJECTS, help="also fit the coupled plant and infer human params")
    p.add_argument("--config", help="settings file (sections sysid., exo., human.)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--noise", type=float, help="torque measurement noise, fraction of RMS torque")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/identify")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("calibrate", help="fit the EMG torque model from recordings")
    p.add_argument("active", nargs="*", help="active-session CSVs (t, ch1_raw, ch2_raw, tau_e)")
    p.add_argument("--relaxed", help="relaxed-session CSV used as the superposition baseline")
    p.add_argument("--k1", type=float, default=0.2)
    p.add_argument("--rate", type=float, default=500.0)
    p.add_argument("--period", type=float, default=4.0, help="cycle length for averaging, s (0 disables)")
    p.add_argument("--out", default="hte_model.txt")
    p.add_argument("--synthesize", metavar="DIR", help="first write synthetic recordings to DIR")
    p.add_argument("--subject", choices=SUBJECTS, default="S1")
    p.add_argument("--conditions", nargs="+", choices=CONDITIONS[1:], default=["EA", "FA"])
    p.add_argument("--duration", type=float, default=24.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("defaults", help="print every setting with its default")
    p.add_argument("--subject", choices=SUBJECTS, default="S1")
    p.set_defaults(func=cmd_defaults)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "period", None) == 0:
        args.period = None
    try:
        return args.func(args)
    except (KeyError, ValueError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
