"""Closed-loop trials: EMG -> torque estimate -> mode inference -> MPC -> plant."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import platform
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, flatten, format_value, write_kv
from .emg_hte import EmgProcessor, FilterSpec, HteModel, Recording, estimate_torque
from .fuzzy import FuzzyConfig, likelihoods
from .mpc import MpcConfig, MpcController, MpcInputs
from .plant import (Condition, InvolvementCondition, JointState, RawEmgSynth, SubjectProfile,
                    human_torque, step_dynamics, subject_profile, synth_emg)


@dataclass(frozen=True)
class ReferenceTrajectory:
    amplitude: float = 0.5
    offset: float = 0.7
    frequency: float = 0.25
    phase: float = -math.pi

    def __post_init__(self):
        if self.amplitude < 0 or self.frequency <= 0:
            raise ValueError("amplitude >= 0 and frequency > 0 required")
        lo, hi = self.offset - self.amplitude, self.offset + self.amplitude
        if lo < 0.0 or hi > 1.4:
            raise ValueError(f"reference range [{lo}, {hi}] leaves the [0, 1.4] rad joint bounds")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def __call__(self, t):
        """Angle and analytic angular velocity at time ``t`` (scalar or array)."""
        w = 2 * math.pi * self.frequency
        arg = w * np.asarray(t, dtype=float) + self.phase
        theta = self.amplitude * np.cos(arg) + self.offset
        theta_dot = -self.amplitude * w * np.sin(arg)
        if theta.ndim == 0:
            return float(theta), float(theta_dot)
        return theta, theta_dot

    def acceleration(self, t):
        w = 2 * math.pi * self.frequency
        return -self.amplitude * w * w * np.cos(w * np.asarray(t, dtype=float) + self.phase)


def reference(t, traj: ReferenceTrajectory = ReferenceTrajectory()):
    if np.any(np.asarray(t) < 0):
        raise ValueError("reference time must be >= 0")
    return traj(t)


@dataclass(frozen=True)
class AdaptationConfig:
    enabled: bool = False
    threshold: float = 0.8

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"resistance threshold must lie in (0, 1), got {self.threshold}")


def adapt_reference(prev_theta_r: float, t_virtual: float, mu_s: float, config: AdaptationConfig,
                    dt: float, traj: ReferenceTrajectory = ReferenceTrajectory()):
    """Next reference angle and virtual time.

    While the safety likelihood exceeds the threshold the angle is held and
    the virtual clock stops; otherwise the clock advances by ``dt`` and the
    sinusoid is evaluated at the new virtual time, so resumption is seamless.
    """
    if config.enabled and mu_s > config.threshold:
        return prev_theta_r, t_virtual
    t_next = t_virtual + dt
    return traj(t_next)[0], t_next


@dataclass(frozen=True)
class TrialConfig:
    duration: float = 24.0
    dt: float = 0.002
    reference: ReferenceTrajectory = ReferenceTrajectory()
    adaptation: AdaptationConfig = AdaptationConfig()
    mpc: MpcConfig = MpcConfig()
    fuzzy: FuzzyConfig = FuzzyConfig()
    emg: FilterSpec = FilterSpec()
    # hold the mode scalar instead of inferring it
    fixed_mode: float | None = None
    # feed the EMG torque estimate into the controller's prediction model
    model_human_torque: bool = True
    # the mode is inferred from the reference speed this many seconds ahead
    mode_velocity_lead: float = 0.05
    # wall-clock cap for adaptive trials, as a multiple of duration
    max_stretch: float = 2.0
    # optional mechanical end stops (rad); the joint is clamped and stopped there
    hard_stop: tuple[float, float] | None = None
    initial_state: tuple[float, float] | None = None

    def __post_init__(self):
        if self.duration <= 0 or not 0 < self.dt <= 0.01:
            raise ValueError("duration > 0 and 0 < dt <= 0.01 required")
        if self.fixed_mode is not None and not 0 <= self.fixed_mode <= 1:
            raise ValueError("fixed_mode must lie in [0, 1]")
        if abs(self.mpc.control_dt - self.dt) > 1e-12:
            object.__setattr__(self, "mpc", dataclasses.replace(self.mpc, control_dt=self.dt))


COLUMNS = ("t", "theta_r", "theta", "theta_dot", "tau_e", "tau_h_true", "tau_h_hat", "ch1", "ch2",
           "mu_A", "mu_S", "m", "stage_cost", "augmented_cost",
           "theta_r_dot", "t_ref", "horizon_cost", "frozen")


@dataclass
class TrialRecord:
    data: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    error: str | None = None

    def __len__(self):
        return len(self.data["t"])

    def __getitem__(self, key) -> np.ndarray:
        return self.data[key]

    @property
    def tracking_error(self) -> np.ndarray:
        return self.data["theta"] - self.data["theta_r"]

    @property
    def completion_time(self) -> float:
        return float(self.data["t"][-1] + self.meta.get("dt", 0.002))


def run_config_values(subject: SubjectProfile, condition: InvolvementCondition, config: TrialConfig,
                      seed: int) -> dict:
    values = {"seed": seed}
    values.update(flatten(subject, "subject."))
    values.update(flatten(condition, "condition."))
    values.update(flatten(config, "trial."))
    return values


def run_trial(subject: SubjectProfile | str, condition: InvolvementCondition | str,
              config: TrialConfig = TrialConfig(), seed: int = 0) -> TrialRecord:
    """Simulate one closed-loop trial sample by sample at ``1 / config.dt``.

    The subject decides its torque ``emg_lead`` seconds ahead; that intent
    drives the synthetic EMG immediately and the joint once the lead has
    elapsed.
    """
    if isinstance(subject, str):
        subject = subject_profile(subject)
    if isinstance(condition, str):
        condition = InvolvementCondition(Condition(condition))
    dt = config.dt
    params = subject.combined
    model: HteModel = subject.hte
    traj = config.reference
    cfg_mpc = config.mpc
    n_nodes = cfg_mpc.steps
    horizon_offsets = np.arange(n_nodes + 1) * cfg_mpc.dt

    n_nominal = int(round(config.duration / dt))
    n_max = n_nominal if not config.adaptation.enabled else int(round(config.duration * config.max_stretch / dt))
    rng = np.random.default_rng(seed)
    raw_synth = RawEmgSynth(n_max * dt + 1.0, seed=int(rng.integers(2**31)), spec=config.emg)
    processor = EmgProcessor(config.emg)
    controller = MpcController(cfg_mpc)

    lead = int(round(subject.emg_lead / dt))
    # torque already "in flight" at t = 0 follows the nominal schedule
    pending = deque(human_torque(condition, j * dt, traj(j * dt)[1]) for j in range(lead))

    x0 = config.initial_state or (traj(0.0)[0], 0.0)
    state = JointState(*x0)
    t_ref = 0.0
    theta_r = traj(0.0)[0]
    frozen = False
    env = np.zeros(2)

    rows = np.full((n_max, len(COLUMNS)), np.nan)
    error = None
    k = 0
    for k in range(n_max):
        t = k * dt
        theta_r_dot = 0.0 if frozen else traj(t_ref)[1]
        # the subject anticipates the reference one lead interval ahead
        ahead_dot = 0.0 if frozen else traj(t_ref + subject.emg_lead)[1]

        intent = human_torque(condition, t + subject.emg_lead, ahead_dot)
        pending.append(intent)
        tau_h = pending.popleft()

        frame = synth_emg(intent, model, subject.noise_level, rng, t)
        block = processor.process(raw_synth.samples_until(t, (frame.ch1, frame.ch2)))
        if block.shape[1]:
            env = block[:, -1]
        tau_hat = float(estimate_torque(env, model))

        mode_dot = theta_r_dot
        if config.mode_velocity_lead and not frozen:
            mode_dot = traj(t_ref + config.mode_velocity_lead)[1]
        mu_a, mu_s, m = (float(v) for v in likelihoods(tau_hat, mode_dot, config.fuzzy))
        m_used = m if config.fixed_mode is None else config.fixed_mode

        if frozen:
            window = np.full(n_nodes + 1, theta_r)
        else:
            window = traj(t_ref + horizon_offsets)[0]
            window[0] = theta_r
        inputs = MpcInputs(state=state, theta_ref=window, params=params,
                           tau_h_hat=tau_hat if config.model_human_torque else 0.0,
                           mode=m_used, theta_ref_dot=theta_r_dot)
        try:
            tau_e, diag = controller.control_step(inputs)
        except (FloatingPointError, ValueError) as exc:
            error = f"controller failure at t={t:.3f}s: {exc}"
            break

        rows[k] = (t, theta_r, state.theta, state.theta_dot, tau_e, tau_h, tau_hat, env[0], env[1],
                   mu_a, mu_s, m_used, diag.stage_cost, diag.augmented_cost,
                   theta_r_dot, t_ref, diag.horizon_cost, float(frozen))

        try:
            state = step_dynamics(state, params, tau_e, tau_h, dt)
        except ValueError as exc:
            error = f"plant failure at t={t:.3f}s: {exc}"
            k += 1
            break
        if config.hard_stop is not None:
            lo, hi = config.hard_stop
            if state.theta < lo or state.theta > hi:
                state = JointState(min(max(state.theta, lo), hi), 0.0)

        prev_t_ref = t_ref
        theta_r, t_ref = adapt_reference(theta_r, t_ref, mu_s, config.adaptation, dt, traj)
        frozen = t_ref == prev_t_ref
        if t_ref >= config.duration - dt / 2:
            k += 1
            break
    else:
        k = n_max

    rows = rows[:k] if error is None else rows[: max(k, 0)]
    rows = rows[~np.isnan(rows[:, 0])]
    data = {name: rows[:, i].copy() for i, name in enumerate(COLUMNS)}
    values = run_config_values(subject, condition, config, seed)
    meta = {"subject": subject.name, "condition": condition.kind.value, "seed": seed,
            "config_hash": config_hash(values), "dt": dt, "period": traj.period,
            "duration": config.duration}
    return TrialRecord(data=data, meta=meta, error=error)


def calibration_recording(subject: SubjectProfile | str, condition: InvolvementCondition | str,
                          duration: float = 24.0, seed: int = 0,
                          traj: ReferenceTrajectory = ReferenceTrajectory(),
                          spec: FilterSpec = FilterSpec(), noise_level: float | None = None) -> Recording:
    """Synthetic calibration session under ideal position control.

    The exoskeleton reproduces the reference exactly, so its torque is the
    inverse dynamics minus whatever the subject contributes.  EMG leads the
    torque by the subject's ``emg_lead``.  Sampled at the EMG rate.
    """
    if isinstance(subject, str):
        subject = subject_profile(subject)
    if isinstance(condition, str):
        condition = InvolvementCondition(Condition(condition))
    noise = subject.noise_level if noise_level is None else noise_level
    rng = np.random.default_rng(seed)
    synth = RawEmgSynth(duration + 1.0, seed=int(rng.integers(2**31)), spec=spec)
    n = int(round(duration * spec.fs)) + 1
    t = np.arange(n) / spec.fs
    p = subject.combined
    th, thd = traj(t)
    thdd = traj.acceleration(t)
    lead = subject.emg_lead
    _, thd_ahead = traj(t + lead)
    tau_h = np.array([human_torque(condition, ti, vi) for ti, vi in zip(t, traj(t)[1])])
    tau_future = np.array([human_torque(condition, ti + lead, vi) for ti, vi in zip(t, thd_ahead)])
    env = np.array([[f.ch1, f.ch2] for f in (synth_emg(v, subject.hte, noise, rng, ti)
                                              for ti, v in zip(t, tau_future))]).T
    raw = synth.carrier[:, :n] * env
    tau_e = p.inertia * thdd + p.damping * thd + p.gravity_torque * np.sin(th) - tau_h
    return Recording(t=t, ch1_raw=raw[0], ch2_raw=raw[1], tau_e=tau_e)


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class PhaseMetrics:
    human_torque_ratio: float
    error_median: float
    error_q1: float
    error_q3: float
    abs_error_median: float
    rms_mu_A: float
    rms_mu_S: float
    rms_tau_h_hat: float
    rms_tau_e: float
    samples: int


@dataclass(frozen=True)
class TrialMetrics:
    extension: PhaseMetrics
    flexion: PhaseMetrics
    rms_error: float
    max_abs_theta_dot: float
    max_abs_tau_e: float

    def phase(self, name: str) -> PhaseMetrics:
        return {"E": self.extension, "F": self.flexion}[name[0].upper()]

    def as_dict(self) -> dict:
        out = {}
        for ph, pm in (("E", self.extension), ("F", self.flexion)):
            for k, v in dataclasses.asdict(pm).items():
                out[f"{ph}.{k}"] = v
        out.update(rms_error=self.rms_error, max_abs_theta_dot=self.max_abs_theta_dot,
                   max_abs_tau_e=self.max_abs_tau_e)
        return out


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else float("nan")


def human_torque_ratio(tau_h_hat, tau_e) -> float:
    rh, re = _rms(tau_h_hat), _rms(tau_e)
    return rh / (rh + re) if rh + re > 0 else 0.0


def phase_masks(t_ref, period: float = 4.0):
    tc = np.mod(np.asarray(t_ref), period)
    ext = tc < period / 2
    return ext, ~ext


def compute_metrics(record: TrialRecord) -> TrialMetrics:
    d = record.data
    if len(d["t"]) == 0:
        raise ValueError("empty trial record")
    err = d["theta"] - d["theta_r"]
    ext, flex = phase_masks(d["t_ref"], record.meta.get("period", 4.0))
    phases = []
    for mask, name in ((ext, "extension"), (flex, "flexion")):
        if not mask.any():
            raise ValueError(f"no samples in the {name} phase")
        e = err[mask]
        q1, med, q3 = np.percentile(e, [25, 50, 75])
        phases.append(PhaseMetrics(
            human_torque_ratio=human_torque_ratio(d["tau_h_hat"][mask], d["tau_e"][mask]),
            error_median=float(med), error_q1=float(q1), error_q3=float(q3),
            abs_error_median=float(np.median(np.abs(e))),
            rms_mu_A=_rms(d["mu_A"][mask]), rms_mu_S=_rms(d["mu_S"][mask]),
            rms_tau_h_hat=_rms(d["tau_h_hat"][mask]), rms_tau_e=_rms(d["tau_e"][mask]),
            samples=int(mask.sum())))
    return TrialMetrics(extension=phases[0], flexion=phases[1], rms_error=_rms(err),
                        max_abs_theta_dot=float(np.max(np.abs(d["theta_dot"]))),
                        max_abs_tau_e=float(np.max(np.abs(d["tau_e"]))))


# --------------------------------------------------------------------------
# serialisation


def record_to_csv(record: TrialRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    cols = [record.data[c] for c in COLUMNS]
    for row in zip(*cols):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def load_record(path) -> TrialRecord:
    """Read a trial CSV written by :func:`export`; metadata comes from the sibling manifest."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    data = {name: arr[:, i].copy() for i, name in enumerate(header)}
    meta = {}
    manifest = path.parent / (path.stem + ".manifest.json")
    if manifest.exists():
        meta = json.loads(manifest.read_text()).get("meta", {})
    return TrialRecord(data=data, meta=meta)


def export(record: TrialRecord, metrics: TrialMetrics | None, path) -> dict[str, Path]:
    """Write ``<path>.csv``, ``<path>.metrics.txt`` and ``<path>.manifest.json``."""
    base = Path(path)
    if base.suffix == ".csv":
        base = base.with_suffix("")

    def sibling(ext):
        return base.parent / (base.name + ext)
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        csv_path = sibling(".csv")
        csv_path.write_text(record_to_csv(record))
        out = {"csv": csv_path}
        if metrics is not None:
            met_path = sibling(".metrics.txt")
            write_kv(met_path, metrics.as_dict(),
                     header=f"trial {record.meta.get('subject')} {record.meta.get('condition')} "
                            f"seed {record.meta.get('seed')}")
            out["metrics"] = met_path
        man_path = sibling(".manifest.json")
        manifest = {
            "meta": record.meta,
            "error": record.error,
            "columns": list(COLUMNS),
            "versions": {"aanexo": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }
        man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        out["manifest"] = man_path
    except OSError as exc:
        raise OSError(f"could not write trial output under {base}: {exc}") from exc
    return out


def metrics_text(metrics: TrialMetrics) -> str:
    return "\n".join(f"{k} = {format_value(v)}" for k, v in metrics.as_dict().items())
