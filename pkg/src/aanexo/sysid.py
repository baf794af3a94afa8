"""Parametric identification of the joint model from proportional-control trials.

Each excitation trial tracks ``theta_r = offset + amplitude sin(2 pi f t)``
with ``tau_e = K (theta_r - theta)``.  The regression

    J theta_dd + B theta_d + tau_g sin(theta) = tau_e

is linear in ``(J, B, tau_g)``.  Angle, ``sin(theta)`` and torque pass
through the same 5 Hz low-pass; derivatives are central differences of the
filtered angle.  Because every column sees the same linear filter the
filtered equation still holds, so noiseless data fit exactly up to the
differencing error.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numba import njit
from scipy import signal

from .emg_hte import RankDeficiencyError
from .plant import EXO_PARAMS, PlantParams

PARAM_NAMES = ("inertia J", "damping B", "gravity torque tau_g")


class UnstableExcitationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SysIdConfig:
    gain: float = 250.0
    frequencies: tuple[float, ...] = (0.1, 0.2, 0.25, 0.5, 1.0)
    cycles: float = 2.0
    # leading stretch of each trial dropped while the filters settle
    settle: float = 1.0
    amplitude: float = 0.5
    offset: float = 0.7
    cutoff: float = 5.0
    filter_order: int = 2
    rate: float = 500.0
    substeps: int = 10
    torque_noise: float = 0.0
    seed: int = 0
    # |theta| beyond this aborts the trial as divergent
    divergence_limit: float = 10.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"gain K must be > 0, got {self.gain}")
        if not self.frequencies or any(f <= 0 for f in self.frequencies):
            raise ValueError("excitation frequencies must be positive")
        if len(set(self.frequencies)) != len(self.frequencies):
            raise ValueError("excitation frequencies must be distinct")
        if not 0 < self.cutoff < self.rate / 2:
            raise ValueError(f"cutoff {self.cutoff} Hz outside (0, {self.rate / 2})")
        if self.cycles <= 0 or self.settle < 0 or self.substeps < 1:
            raise ValueError("cycles > 0, settle >= 0 and substeps >= 1 required")
        if self.torque_noise < 0:
            raise ValueError("torque_noise must be >= 0")

    def duration(self, frequency: float) -> float:
        return self.settle + self.cycles / frequency


@dataclass
class IdDataset:
    """Filtered regression data, one row per retained sample."""
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    sin_theta: np.ndarray
    tau_e: np.ndarray
    frequency: np.ndarray

    COLUMNS = ("t", "theta", "theta_dot", "theta_ddot", "sin_theta", "tau_e", "frequency")

    def __len__(self):
        return len(self.t)

    def regressors(self) -> np.ndarray:
        return np.column_stack([self.theta_ddot, self.theta_dot, self.sin_theta])

    @classmethod
    def concatenate(cls, parts: list["IdDataset"]) -> "IdDataset":
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in cls.COLUMNS))

    def to_csv(self, path):
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(self.COLUMNS)
                for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
                    w.writerow([repr(float(v)) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write dataset {path}: {exc}") from exc

    @classmethod
    def from_csv(cls, path) -> "IdDataset":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != cls.COLUMNS:
                raise ValueError(f"{path}: unexpected header {header}")
            data = np.array([[float(v) for v in row] for row in reader], dtype=float)
        data = data.reshape(-1, len(cls.COLUMNS))
        return cls(*(data[:, i].copy() for i in range(len(cls.COLUMNS))))


@njit(cache=True)
def _simulate(theta0, omega0, J, B, g, K, amp, off, freq, h, n, sub, tau_h, limit, theta, tau):
    """RK4 with the proportional law evaluated at every stage.

    ``tau_h`` holds the human torque at the output samples (held within a
    sample).  Returns the number of samples filled before divergence.
    """
    w = 2.0 * np.pi * freq
    hs = h / sub
    th = theta0
    om = omega0
    for k in range(n):
        t = k * h
        theta[k] = th
        tau[k] = K * (off + amp * np.sin(w * t) - th)
        if not (abs(th) < limit):
            return k
        d = tau_h[k]
        for s in range(sub):
            ts = t + s * hs
            u1 = K * (off + amp * np.sin(w * ts) - th)
            a1 = (u1 + d - B * om - g * np.sin(th)) / J
            th2 = th + 0.5 * hs * om
            om2 = om + 0.5 * hs * a1
            u2 = K * (off + amp * np.sin(w * (ts + 0.5 * hs)) - th2)
            a2 = (u2 + d - B * om2 - g * np.sin(th2)) / J
            th3 = th + 0.5 * hs * om2
            om3 = om + 0.5 * hs * a2
            u3 = K * (off + amp * np.sin(w * (ts + 0.5 * hs)) - th3)
            a3 = (u3 + d - B * om3 - g * np.sin(th3)) / J
            th4 = th + hs * om3
            om4 = om + hs * a3
            u4 = K * (off + amp * np.sin(w * (ts + hs)) - th4)
            a4 = (u4 + d - B * om4 - g * np.sin(th4)) / J
            th = th + hs / 6.0 * (om + 2 * om2 + 2 * om3 + om4)
            om = om + hs / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return n


@dataclass
class ExcitationTrial:
    frequency: float
    t: np.ndarray
    theta: np.ndarray
    theta_r: np.ndarray
    tau_e: np.ndarray

    def tracking_error(self) -> np.ndarray:
        return self.theta - self.theta_r


def simulate_excitation(params: PlantParams, frequency: float, config: SysIdConfig = SysIdConfig(),
                        tau_h: Callable[[np.ndarray], np.ndarray] | None = None) -> ExcitationTrial:
    """One proportional-control tracking trial sampled at ``config.rate``."""
    h = 1.0 / config.rate
    n = int(round(config.duration(frequency) * config.rate)) + 1
    t = np.arange(n) * h
    theta_r = config.offset + config.amplitude * np.sin(2 * np.pi * frequency * t)
    d = np.zeros(n) if tau_h is None else np.asarray(tau_h(t), dtype=float) * np.ones(n)
    theta = np.zeros(n)
    tau = np.zeros(n)
    # start on the reference so the trial opens without a step transient
    omega0 = config.amplitude * 2 * np.pi * frequency
    filled = _simulate(config.offset, omega0, params.inertia, params.damping, params.gravity_torque,
                       config.gain, config.amplitude, config.offset, frequency, h, n, config.substeps,
                       d, config.divergence_limit, theta, tau)
    if filled < n or not np.all(np.isfinite(theta)):
        raise UnstableExcitationError(
            f"excitation at {frequency} Hz diverged after {filled * h:.3f} s with K={config.gain}; "
            "lower the proportional gain")
    return ExcitationTrial(frequency=frequency, t=t, theta=theta, theta_r=theta_r, tau_e=tau)


# 7-point central differences (sixth-order accurate)
_D1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
_HALF = 3


def filtered_dataset(trial: ExcitationTrial, config: SysIdConfig = SysIdConfig(),
                     tau_measured: np.ndarray | None = None) -> IdDataset:
    """Apply the low-pass and differencing chain to one trial."""
    h = 1.0 / config.rate
    sos = signal.butter(config.filter_order, config.cutoff, fs=config.rate, output="sos")
    tau = trial.tau_e if tau_measured is None else tau_measured
    block = np.vstack([trial.theta, np.sin(trial.theta), tau])
    # start every filter at the DC steady state of its first sample
    zi = signal.sosfilt_zi(sos)[:, None, :] * block[:, 0][None, :, None]
    f = signal.sosfilt(sos, block, axis=1, zi=zi)[0]
    th = f[0]
    d1 = np.correlate(th, _D1, mode="valid") / h
    d2 = np.correlate(th, _D2, mode="valid") / (h * h)
    core = slice(_HALF, len(th) - _HALF)
    keep = trial.t[core] >= config.settle
    return IdDataset(
        t=trial.t[core][keep], theta=th[core][keep], theta_dot=d1[keep], theta_ddot=d2[keep],
        sin_theta=f[1][core][keep], tau_e=f[2][core][keep],
        frequency=np.full(int(keep.sum()), trial.frequency),
    )


def run_excitation(params: PlantParams, config: SysIdConfig = SysIdConfig(),
                   tau_h: Callable[[np.ndarray], np.ndarray] | None = None) -> IdDataset:
    """Excite at every configured frequency and return the pooled dataset.

    ``config.torque_noise`` adds white noise of that fraction of the trial's
    RMS torque to the measured torque before filtering.
    """
    rng = np.random.default_rng(config.seed)
    parts = []
    for freq in config.frequencies:
        trial = simulate_excitation(params, freq, config, tau_h)
        measured = None
        if config.torque_noise > 0:
            scale = config.torque_noise * np.sqrt(np.mean(trial.tau_e ** 2))
            measured = trial.tau_e + rng.normal(0.0, scale, trial.tau_e.shape)
        parts.append(filtered_dataset(trial, config, measured))
    return IdDataset.concatenate(parts)


@dataclass
class FitReport:
    rmse: float
    covariance: np.ndarray
    n: int
    condition_number: float
    residuals: np.ndarray = field(repr=False)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def relative_std(self, params: PlantParams) -> np.ndarray:
        return self.std / np.abs(np.array(params.as_tuple()))

    def as_dict(self) -> dict:
        s = self.std
        return {"rmse": self.rmse, "n": self.n, "condition_number": self.condition_number,
                "std_inertia": s[0], "std_damping": s[1], "std_gravity_torque": s[2]}


def fit_params(data: IdDataset) -> tuple[PlantParams, FitReport]:
    """Joint least-squares fit of ``(J, B, tau_g)`` over every sample."""
    X = data.regressors()
    y = data.tau_e
    if len(y) < 3:
        raise RankDeficiencyError(f"only {len(y)} samples; need at least 3")
    scale = np.linalg.norm(X, axis=0)
    for j, name in enumerate(PARAM_NAMES):
        if scale[j] == 0:
            raise RankDeficiencyError(f"{name} is unidentifiable: its regressor is identically zero")
    Xn = X / scale
    _, sv, vt = np.linalg.svd(Xn, full_matrices=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if not cond < 1e10:
        worst = PARAM_NAMES[int(np.argmax(np.abs(vt[-1])))]
        raise RankDeficiencyError(
            f"{worst} is unidentifiable: regressors are collinear (condition number {cond:.3g})")
    coef_n, *_ = np.linalg.lstsq(Xn, y, rcond=None)
    coef = coef_n / scale
    resid = y - X @ coef
    dof = max(len(y) - 3, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    report = FitReport(rmse=float(np.sqrt(np.mean(resid ** 2))), covariance=cov, n=len(y),
                       condition_number=cond, residuals=resid)
    if np.any(coef <= 0):
        raise ValueError(f"non-physical fit (J, B, tau_g) = {tuple(coef)}; check excitation data")
    return PlantParams(*map(float, coef)), report


@dataclass(frozen=True)
class HumanInference:
    inertia: float
    damping: float
    gravity_torque: float
    warnings: tuple[str, ...] = ()

    @property
    def non_physical(self) -> bool:
        return bool(self.warnings)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.inertia, self.damping, self.gravity_torque)

    def params(self) -> PlantParams:
        return PlantParams(*self.as_tuple())


def infer_human_params(combined: PlantParams, exo: PlantParams = EXO_PARAMS) -> HumanInference:
    """Human limb parameters by superposition: ``combined - exo``."""
    diff = [c - e for c, e in zip(combined.as_tuple(), exo.as_tuple())]
    names = ("inertia", "damping", "gravity_torque")
    warnings = tuple(f"negative human {n} ({v:.6g}); fit is non-physical"
                     for n, v in zip(names, diff) if v < 0)
    return HumanInference(*diff, warnings=warnings)
