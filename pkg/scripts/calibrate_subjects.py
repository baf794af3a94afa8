"""Calibrate the EMG torque model of each subject from synthetic recordings.

A relaxed session supplies the passive baseline; extension- and
flexion-assist sessions supply the active torque.  The fitted coefficients
are compared with the tabulated model the recordings were generated from.

    python3 scripts/calibrate_subjects.py --duration 24 --noise 0.5
"""
import argparse

from aanexo.emg_hte import HTE_MODELS, calibrate_from_recordings
from aanexo.harness import calibration_recording


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", nargs="+", default=list(HTE_MODELS))
    ap.add_argument("--duration", type=float, default=24.0)
    ap.add_argument("--noise", type=float, help="EMG noise level (default: the subject profile's)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'subj':5}{'b0':>9}{'a1':>9}{'a2':>9}  {'true b0, a1, a2':24}{'nrmse':>8}{'acc':>8}")
    for s in args.subjects:
        relaxed = calibration_recording(s, "R", args.duration, args.seed, noise_level=args.noise)
        active = [calibration_recording(s, c, args.duration, args.seed + i + 1, noise_level=args.noise)
                  for i, c in enumerate(("EA", "FA"))]
        fit = calibrate_from_recordings(relaxed, active, period=4.0)
        m, t = fit.model, HTE_MODELS[s]
        print(f"{s:5}{m.b0:9.3f}{m.a1:9.1f}{m.a2:9.1f}  {t.b0:6.3f} {t.a1:7.1f} {t.a2:7.1f}    "
              f"{fit.nrmse:8.4f}{fit.accuracy:8.2%}")


if __name__ == "__main__":
    main()
