"""Identify the exoskeleton and the three coupled plants at several noise levels.

For each torque-noise level the script fits (J, B, tau_g) jointly over all
excitation frequencies, then recovers the human parameters by subtracting
the exoskeleton fit.

    python3 scripts/identify_plants.py --noise 0 0.01 0.05
"""
import argparse

import numpy as np

from aanexo.plant import EXO_PARAMS, HUMAN_PARAMS, combined_params
from aanexo.sysid import SysIdConfig, fit_params, infer_human_params, run_excitation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", nargs="+", type=float, default=[0.0, 0.01, 0.05])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gain", type=float, default=SysIdConfig().gain)
    args = ap.parse_args()

    for noise in args.noise:
        cfg = SysIdConfig(torque_noise=noise, seed=args.seed, gain=args.gain)
        exo_fit, rep = fit_params(run_excitation(EXO_PARAMS, cfg))
        print(f"\n# torque noise {noise:.0%}")
        print(f"{'plant':8}{'J':>10}{'B':>10}{'tau_g':>10}{'max rel err':>13}{'rmse':>10}")
        print(f"{'exo':8}" + "".join(f"{v:10.4f}" for v in exo_fit.as_tuple())
              + f"{_rel(exo_fit, EXO_PARAMS):13.2e}{rep.rmse:10.4f}")
        for s in HUMAN_PARAMS:
            fit, rep = fit_params(run_excitation(combined_params(s), cfg))
            human = infer_human_params(fit, exo_fit)
            print(f"{s + '+exo':8}" + "".join(f"{v:10.4f}" for v in fit.as_tuple())
                  + f"{_rel(fit, combined_params(s)):13.2e}{rep.rmse:10.4f}")
            flag = "  (non-physical)" if human.non_physical else ""
            print(f"{s:8}" + "".join(f"{v:10.4f}" for v in human.as_tuple())
                  + f"{_rel(human, HUMAN_PARAMS[s]):13.2e}{flag}")


def _rel(fit, true):
    return float(np.max(np.abs(np.subtract(fit.as_tuple(), true.as_tuple())) / true.as_tuple()))


if __name__ == "__main__":
    main()
