"""Acceptance criteria 1-11, each as one test that logs a PASS/FAIL line.

The closed-loop criteria share the cached 3 subjects x 5 conditions x 5 seeds
grid of default 24 s trials from ``conftest``.  A summary section listing
every criterion is printed at the end of the pytest run.
"""
import math

import numpy as np

from aanexo.cli import main
from aanexo.emg_hte import HTE_MODELS, calibrate_hte, nrmse
from aanexo.fuzzy import check_membership_budget, infer, likelihoods
from aanexo.harness import TrialConfig, run_trial
from aanexo.mpc import MpcController, solve
from aanexo.plant import EXO_PARAMS, JointState, PlantParams, combined_params, step_dynamics
from aanexo.sysid import SysIdConfig, fit_params, infer_human_params, run_excitation

from conftest import (CONDITIONS, PULSE_DURATION, PULSE_THRESHOLD, SEEDS, SUBJECTS, TRIAL_SECONDS)
from test_emg_hte import forward_dataset, sweep_dataset
from test_mpc import CFG, inputs, random_problem, toy_cost_grid

DT = 0.002
PHASES = ("extension", "flexion")
ASSIST = {"extension": "EA", "flexion": "FA"}
RESIST = {"extension": "ER", "flexion": "FR"}


def phase(metrics, name):
    return getattr(metrics, name)


def test_c01_passive_tracking(criterion, default_trial):
    with criterion(1, "passive tracking: R medians within 0.05 rad, < 10 s per trial") as c:
        for s in SUBJECTS:
            rec, met = default_trial(s, "R", 0)
            c.check(f"{s} completed", rec.error is None and len(rec) == 12000, rec.error or "")
            for ph in PHASES:
                med = phase(met, ph).error_median
                c.check(f"{s} {ph} median", abs(med) <= 0.05, f"{med:+.4f} rad")
            secs = TRIAL_SECONDS[(s, "R", 0)]
            c.check(f"{s} runtime", secs < 10.0, f"{secs:.1f} s")


def test_c02_compliance_ordering(criterion, default_trial):
    with criterion(2, "compliance ordering R < assist < resist per phase, 5 seeds") as c:
        for s in SUBJECTS:
            for ph in PHASES:
                pooled = {k: [] for k in ("R", "A", "S")}
                for seed in SEEDS:
                    r = phase(default_trial(s, "R", seed)[1], ph).abs_error_median
                    a = phase(default_trial(s, ASSIST[ph], seed)[1], ph).abs_error_median
                    x = phase(default_trial(s, RESIST[ph], seed)[1], ph).abs_error_median
                    c.check(f"{s} {ph} seed {seed}", r < a < x, f"{r:.4f} < {a:.4f} < {x:.4f}")
                    for k, v in zip("RAS", (r, a, x)):
                        pooled[k].append(v)
                med = {k: float(np.median(v)) for k, v in pooled.items()}
                c.check(f"{s} {ph} across seeds", med["R"] < med["A"] < med["S"],
                        f"{med['R']:.4f} < {med['A']:.4f} < {med['S']:.4f}")


def test_c03_mode_detection(criterion, default_trial):
    with criterion(3, "mode detection: EA mu_A >= 0.4, ER mu_S >= 0.4, off-mode <= 0.1") as c:
        for s in SUBJECTS:
            for seed in SEEDS:
                ea = default_trial(s, "EA", seed)[1].extension
                er = default_trial(s, "ER", seed)[1].extension
                c.check(f"{s} seed {seed} EA", ea.rms_mu_A >= 0.4 and ea.rms_mu_S <= 0.1,
                        f"mu_A {ea.rms_mu_A:.3f} mu_S {ea.rms_mu_S:.3f}")
                c.check(f"{s} seed {seed} ER", er.rms_mu_S >= 0.4 and er.rms_mu_A <= 0.1,
                        f"mu_S {er.rms_mu_S:.3f} mu_A {er.rms_mu_A:.3f}")


def test_c04_human_torque_ratio(criterion, default_trial):
    with criterion(4, "human torque ratio: R <= 0.1 both phases, EA extension >= 0.25") as c:
        for s in SUBJECTS:
            for seed in SEEDS:
                r = default_trial(s, "R", seed)[1]
                ea = default_trial(s, "EA", seed)[1]
                c.check(f"{s} seed {seed} R",
                        r.extension.human_torque_ratio <= 0.1 and r.flexion.human_torque_ratio <= 0.1,
                        f"{r.extension.human_torque_ratio:.3f}/{r.flexion.human_torque_ratio:.3f}")
                c.check(f"{s} seed {seed} EA", ea.extension.human_torque_ratio >= 0.25,
                        f"{ea.extension.human_torque_ratio:.3f}")


def test_c05_constraints(criterion, default_trial):
    with criterion(5, "constraints: |tau_e| <= 25 always, |theta_dot| <= 2.05 in step recovery") as c:
        worst = 0.0
        for s in SUBJECTS:
            for cond in CONDITIONS:
                for seed in SEEDS:
                    tau = default_trial(s, cond, seed)[0]["tau_e"]
                    worst = max(worst, float(np.abs(tau).max()))
                    c.check(f"{s} {cond} seed {seed} torque", tau.min() >= -25.0 and tau.max() <= 25.0)
        c.check("worst applied torque", worst <= 25.0, f"{worst:.3f} N*m")

        rec = run_trial("S1", "R", TrialConfig(duration=4.0, initial_state=(1.3, 0.0)), seed=0)
        vmax = float(np.abs(rec["theta_dot"]).max())
        cost = rec["augmented_cost"]
        c.check("step recovery completed", rec.error is None, rec.error or "")
        c.check("step recovery speed", vmax <= 2.05, f"{vmax:.3f} rad/s")
        c.check("step recovery torque", np.abs(rec["tau_e"]).max() <= 25.0,
                f"peak {np.abs(rec['tau_e']).max():.1f} N*m")
        c.check("constraint activation raises the cost", cost.max() > 10 * np.median(cost),
                f"peak {cost.max():.0f} vs median {np.median(cost):.1f}")


def test_c06_solver(criterion):
    with criterion(6, "solver: gradient vs FD < 1e-5, 2-step grid oracle, monotone descent") as c:
        rng = np.random.default_rng(0)
        worst = 0.0
        for i in range(100):
            prob, u = random_problem(rng, active=i % 2 == 0)
            _, g = prob.value_and_grad(u)
            fd = np.empty_like(u)
            for k in range(len(u)):
                e = np.zeros_like(u)
                e[k] = 1e-6
                fd[k] = (prob.value(u + e) - prob.value(u - e)) / 2e-6
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
        c.check("gradient on 100 instances", worst < 1e-5, f"worst relative error {worst:.2e}")

        cfg = type(CFG)(horizon=0.02, steps=2, w_theta=100.0, w_tau=0.1)
        state, ref = (0.05, 0.0), np.array([0.05, 0.08, 0.12])
        p = combined_params("S1")
        sol = solve(inputs(*state, ref=ref, params=p, n=2), cfg)
        coarse = np.arange(-25, 25.001, 0.1)
        grid = toy_cost_grid(state, ref, p, cfg, coarse, coarse)
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        f0 = np.arange(coarse[i] - 0.2, coarse[i] + 0.2001, 0.01)
        f1 = np.arange(coarse[j] - 0.2, coarse[j] + 0.2001, 0.01)
        i, j = np.unravel_index(np.argmin(toy_cost_grid(state, ref, p, cfg, f0, f1)), (len(f0), len(f1)))
        gap = max(abs(sol.u[0] - f0[i]), abs(sol.u[1] - f1[j]))
        c.check("2-step grid oracle", gap <= 0.01, f"distance {gap:.4f} N*m, cell 0.01")

        ctl = MpcController(CFG)
        st = JointState(0.2, 0.0)
        bad = 0
        for n in range(2000):
            t = n * CFG.control_dt
            r = 0.7 - 0.5 * np.cos(2 * np.pi * 0.25 * (t + np.arange(CFG.steps + 1) * CFG.dt))
            tau, diag = ctl.control_step(inputs(st.theta, st.theta_dot, ref=r))
            h = diag.cost_history
            bad += int(np.any(np.diff(h) > 1e-12 * np.abs(h[:-1]) + 1e-12))
            st = step_dynamics(st, p, tau, 0.0, CFG.control_dt)
        c.check("monotone inner descent on 2000 logged solves", bad == 0, f"{bad} violations")


def test_c07_identification(criterion):
    sets = {"exo": EXO_PARAMS, **{s: combined_params(s) for s in SUBJECTS}}
    with criterion(7, "identification: 1e-6 noiseless, 2% at 1% noise, S1 human row") as c:
        def rel(fit, true):
            return float(np.max(np.abs(np.subtract(fit.as_tuple(), true.as_tuple())) / true.as_tuple()))

        fits = {}
        for name, p in sets.items():
            fits[name], _ = fit_params(run_excitation(p))
            e = rel(fits[name], p)
            c.check(f"{name} noiseless", e < 1e-6, f"{e:.1e}")
            noisy, _ = fit_params(run_excitation(p, SysIdConfig(torque_noise=0.01, seed=7)))
            e = rel(noisy, p)
            c.check(f"{name} 1% noise", e < 0.02, f"{e:.2%}")
        h = infer_human_params(fits["S1"])
        c.check("S1 human row from synthetic fit",
                np.allclose(h.as_tuple(), (0.4315, 0.1676, 14.256), rtol=1e-6, atol=0),
                str(tuple(round(v, 6) for v in h.as_tuple())))
        table = infer_human_params(PlantParams(0.4692, 0.1883, 16.0096))
        c.check("S1 human row from tabulated combined",
                np.allclose(table.as_tuple(), (0.4315, 0.1676, 14.256), rtol=0, atol=1e-12))


def test_c08_hte_calibration(criterion):
    with criterion(8, "HTE calibration: 1e-6 noiseless, 5% at 5% channel noise, NRMSE formula") as c:
        for name, model in HTE_MODELS.items():
            want = np.array([model.b0, model.a1, model.a2])
            ch, tau = forward_dataset(model)
            fit = calibrate_hte(ch, tau).model
            e = np.max(np.abs(np.array([fit.b0, fit.a1, fit.a2]) - want) / np.abs(want))
            c.check(f"{name} noiseless", e <= 1e-6, f"{e:.1e}")
            ch, tau = sweep_dataset(model, seconds=400.0)
            noisy = ch * (1 + 0.05 * np.random.default_rng(5).standard_normal(ch.shape))
            fit = calibrate_hte(noisy, tau).model
            e = np.max(np.abs(np.array([fit.b0, fit.a1, fit.a2]) - want) / np.abs(want))
            c.check(f"{name} 5% noise", e <= 0.05, f"{e:.2%}")
        ref = np.array([0.0, 2.0, 4.0, 2.0])
        r, nr = nrmse(ref + np.array([0.1, -0.1, 0.1, -0.1]), ref)
        c.check("NRMSE = RMSE / range", math.isclose(r, 0.1) and math.isclose(nr, 0.025), f"{nr}")


def test_c09_fuzzy(criterion):
    with criterion(9, "fuzzy: infer examples to 1e-6, membership budget, m in [0, 1] on 1e6 grid") as c:
        examples = [((5.0, 0.785), (0.999998765019859, 2.0596112440626586e-08, 0.500000596893958)),
                    ((-5.0, 0.785), (2.0596070864493344e-08, 0.9999987650199005, 1.2246820640937628e-06)),
                    ((0.0, 0.785), (0.017986190143324518, 0.01798619014332601, 0.9730207147850117))]
        for (tau, v), want in examples:
            r = infer(tau, v)
            err = max(abs(a - b) for a, b in zip((r.mu_A, r.mu_S, r.m), want))
            c.check(f"infer({tau}, {v})", err <= 1e-6, f"max deviation {err:.1e}")
        report = check_membership_budget()
        c.check("membership budget on defaults", report.passed,
                f"torque axis {report.torque_worst:.4f}, velocity axis {report.velocity_worst:.4f} "
                f"at v = {round(report.velocity_worst_at, 9) + 0.0:g}")
        _, _, m = likelihoods(np.linspace(-25, 25, 1000)[:, None], np.linspace(-2, 2, 1000)[None, :])
        c.check("m in [0, 1] on 10^6 points", m.size == 10 ** 6 and m.min() >= 0 and m.max() <= 1,
                f"[{m.min():.4f}, {m.max():.4f}]")


def test_c10_adaptation(criterion, pulse_trial):
    with criterion(10, "adaptation: freeze while mu_S > R_th, continuous, completion += freeze") as c:
        plain, rec = pulse_trial(False), pulse_trial(True)
        frozen = rec["frozen"].astype(bool)
        c.check("trials completed", rec.error is None and plain.error is None)
        c.check("freeze exactly when mu_S > R_th",
                frozen.any() and np.array_equal(frozen[1:], rec["mu_S"][:-1] > PULSE_THRESHOLD),
                f"{int(frozen.sum())} frozen samples")
        c.check("theta_r held while frozen", np.all(np.diff(rec["theta_r"])[frozen[1:]] == 0.0))
        step = float(np.abs(np.diff(rec["theta_r"])).max())
        nominal = 0.5 * 2 * math.pi * 0.25 * DT
        c.check("continuous resumption", step <= nominal * (1 + 1e-9),
                f"largest step {step:.5f} rad vs nominal {nominal:.5f}")
        freeze = frozen.sum() * DT
        ext = rec.completion_time - plain.completion_time
        c.check("completion extended by freeze", abs(ext - freeze) <= 2 * DT,
                f"extension {ext:.3f} s, freeze {freeze:.3f} s, base {plain.completion_time:.3f} s")
        c.check("base trial length", math.isclose(plain.completion_time, PULSE_DURATION))


def test_c11_determinism(criterion, tmp_path):
    with criterion(11, "determinism: repeated batch runs give byte-identical CSVs") as c:
        args = ["batch", "--subjects", "S1", "S3", "--conditions", "EA", "FR", "--seeds", "0", "4"]
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            c.check(f"batch into {d.name}", main(args + ["--out", str(d)]) == 0)
        names = sorted(p.name for p in dirs[0].glob("*.csv"))
        c.check("same files", names == sorted(p.name for p in dirs[1].glob("*.csv")) and len(names) == 9,
                f"{len(names)} CSVs")
        differ = [n for n in names if (dirs[0] / n).read_bytes() != (dirs[1] / n).read_bytes()]
        c.check("byte-identical", not differ, ", ".join(differ))
