"""EMG envelope extraction and the linear agonist-antagonist torque model.

The processing chain is band-pass -> full-wave rectification -> low-pass,
all causal so the same code runs sample-by-sample inside the control loop
and in batch over recorded signals.

Torque estimate from two envelopes (extensor ``ch1``, flexor ``ch2``)::

    tau_hat(t + k1) = b0 + a1 * ch1(t) + a2 * ch2(t)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit
from scipy import signal


class ConfigurationError(ValueError):
    """Raised for filter or model settings that cannot be realised."""


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EmgFrame:
    ch1: float
    ch2: float
    timestamp: float = 0.0


@dataclass(frozen=True)
class HteModel:
    b0: float
    a1: float
    a2: float

    def __post_init__(self):
        if not self.a1 > 0:
            raise ConfigurationError(f"extensor gain a1 must be > 0, got {self.a1}")
        if not self.a2 < 0:
            raise ConfigurationError(f"flexor gain a2 must be < 0, got {self.a2}")


# Per-subject calibrated coefficients (N*m, N*m per envelope unit).
HTE_MODELS = {
    "S1": HteModel(b0=0.181, a1=206.2, a2=-90.5),
    "S2": HteModel(b0=0.127, a1=163.8, a2=-110.1),
    "S3": HteModel(b0=0.204, a1=181.7, a2=-132.8),
}


@dataclass(frozen=True)
class FilterSpec:
    low: float = 10.0
    high: float = 500.0
    envelope_cutoff: float = 2.0
    fs: float = 2048.0
    bandpass_order: int = 4
    envelope_order: int = 2
    notch: float | None = None
    notch_q: float = 30.0

    def validate(self):
        if not 0 < self.low < self.high:
            raise ConfigurationError(
                f"band corners must satisfy 0 < low < high, got {self.low}, {self.high}")
        if self.fs < 2 * self.high:
            raise ConfigurationError(
                f"sample rate {self.fs} Hz violates Nyquist for a {self.high} Hz corner")
        if not 0 < self.envelope_cutoff < self.fs / 2:
            raise ConfigurationError(f"envelope cutoff {self.envelope_cutoff} Hz out of range")
        if self.notch is not None and not 0 < self.notch < self.fs / 2:
            raise ConfigurationError(f"notch frequency {self.notch} Hz out of range")

    def settling_time(self) -> float:
        """Seconds after which the envelope output is treated as settled.

        Five time constants of the envelope low-pass, which dominates the
        chain's transient.
        """
        return 5.0 / (2 * np.pi * self.envelope_cutoff) * self.envelope_order


@njit(cache=True)
def _sosfilt(sos, x, zi):
    """Cascaded biquads, transposed direct form II, in place on ``zi``.

    ``x`` is ``(channels, n)``, ``zi`` is ``(sections, channels, 2)``.
    """
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        for i in range(x.shape[1]):
            v = x[c, i]
            for s in range(sos.shape[0]):
                y = sos[s, 0] * v + zi[s, c, 0]
                zi[s, c, 0] = sos[s, 1] * v - sos[s, 4] * y + zi[s, c, 1]
                zi[s, c, 1] = sos[s, 2] * v - sos[s, 5] * y
                v = y
            out[c, i] = v
    return out


class EmgProcessor:
    """Stateful causal envelope extractor for one or more channels.

    Filter state persists between calls, so feeding a signal in chunks gives
    exactly the same output as processing it in one go.
    """

    def __init__(self, spec: FilterSpec = FilterSpec(), channels: int = 2):
        spec.validate()
        self.spec = spec
        self.channels = channels
        high = min(spec.high, 0.499 * spec.fs)
        self._bp = signal.butter(spec.bandpass_order, [spec.low, high], btype="bandpass",
                                 fs=spec.fs, output="sos")
        if spec.notch is not None:
            b, a = signal.iirnotch(spec.notch, spec.notch_q, fs=spec.fs)
            self._bp = np.vstack([self._bp, signal.tf2sos(b, a)])
        self._lp = signal.butter(spec.envelope_order, spec.envelope_cutoff, btype="lowpass",
                                 fs=spec.fs, output="sos")
        self.reset()

    def reset(self):
        self._zi_bp = np.zeros((self._bp.shape[0], self.channels, 2))
        self._zi_lp = np.zeros((self._lp.shape[0], self.channels, 2))

    def process(self, raw: np.ndarray) -> np.ndarray:
        """Filter a ``(channels, n)`` block and return envelopes of the same shape."""
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        if raw.shape[0] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {raw.shape[0]}")
        if raw.shape[1] == 0:
            return raw.copy()
        band = _sosfilt(self._bp, np.ascontiguousarray(raw), self._zi_bp)
        return _sosfilt(self._lp, np.abs(band), self._zi_lp)


def process_emg(raw, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Envelope of a raw EMG record (1-D single channel or ``(channels, n)``).

    The low-pass output of a rectified signal can dip marginally below zero
    during the initial transient; after ``spec.settling_time()`` it is
    non-negative.
    """
    raw = np.asarray(raw, dtype=float)
    squeeze = raw.ndim == 1
    block = np.atleast_2d(raw)
    env = EmgProcessor(spec, channels=block.shape[0]).process(block)
    return env[0] if squeeze else env


def estimate_torque(frame, model: HteModel):
    """Affine torque estimate, valid ``k1`` seconds after the frame timestamp.

    ``frame`` may be an :class:`EmgFrame` or anything indexable as
    ``(ch1, ch2)`` including a ``(2, n)`` array.
    """
    if isinstance(frame, EmgFrame):
        ch1, ch2 = frame.ch1, frame.ch2
    else:
        ch1, ch2 = frame[0], frame[1]
    return model.b0 + model.a1 * ch1 + model.a2 * ch2


def cycle_average(x: np.ndarray, period: int) -> np.ndarray:
    """Average whole cycles of ``period`` samples and tile back to ``len(x)``."""
    x = np.asarray(x, dtype=float)
    ncycles = len(x) // period
    if ncycles == 0:
        raise ValueError(f"signal of {len(x)} samples shorter than one {period}-sample cycle")
    mean_cycle = x[: ncycles * period].reshape(ncycles, period).mean(axis=0)
    return np.resize(mean_cycle, len(x))


def reference_torque(tau_e_relaxed, tau_e_condition, period: int | None = None) -> np.ndarray:
    """Human torque recovered by superposition against the relaxed baseline.

    With ``period`` (samples per cycle) both signals are cycle-averaged first
    and the averaged difference is tiled over the full length.
    """
    relaxed = np.asarray(tau_e_relaxed, dtype=float)
    cond = np.asarray(tau_e_condition, dtype=float)
    if relaxed.shape != cond.shape:
        raise ValueError(f"length mismatch: relaxed {relaxed.shape} vs condition {cond.shape}")
    if period is not None:
        relaxed = cycle_average(relaxed, period)
        cond = cycle_average(cond, period)
    return relaxed - cond


@dataclass(frozen=True)
class HteFit:
    model: HteModel
    rmse: float
    nrmse: float
    n: int

    @property
    def accuracy(self) -> float:
        return 1.0 - self.nrmse


def nrmse(estimate, reference) -> tuple[float, float]:
    """RMS error and the same normalised by the reference range."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    rmse = float(np.sqrt(np.mean((estimate - reference) ** 2)))
    span = float(reference.max() - reference.min())
    return rmse, (rmse / span if span > 0 else float("nan"))


def _as_channels(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = np.asarray(frames, dtype=float)
        return arr if arr.shape[0] == 2 else arr.T
    frames = list(frames)
    if frames and isinstance(frames[0], EmgFrame):
        return np.array([[f.ch1 for f in frames], [f.ch2 for f in frames]], dtype=float)
    return np.asarray(frames, dtype=float).T


def _lead_aligned(ch: np.ndarray, tau_hr: np.ndarray, shift: int):
    n = len(tau_hr) - shift
    if n <= 0:
        return np.empty((0, 3)), np.empty(0)
    X = np.column_stack([np.ones(n), ch[0, :n], ch[1, :n]])
    return X, tau_hr[shift:]


def _fit_design(X: np.ndarray, y: np.ndarray) -> HteFit:
    n = len(y)
    if n < 3:
        raise RankDeficiencyError(f"only {n} samples after the lead shift")
    names = ("offset", "ch1 (extensor)", "ch2 (flexor)")
    for j in (1, 2):
        if np.ptp(X[:, j]) == 0:
            raise RankDeficiencyError(f"channel {names[j]} is constant; its gain is unidentifiable")
    if np.linalg.matrix_rank(X) < 3:
        raise RankDeficiencyError("EMG channels are collinear; gains are unidentifiable")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    model = HteModel(b0=float(coef[0]), a1=float(coef[1]), a2=float(coef[2]))
    rmse, nr = nrmse(X @ coef, y)
    return HteFit(model=model, rmse=rmse, nrmse=nr, n=n)


def calibrate_hte(frames, tau_hr, k1: float = 0.2, rate: float = 500.0) -> HteFit:
    """Least-squares fit of ``(b0, a1, a2)``.

    ``frames`` are envelopes sampled at ``rate``; sample ``i`` is regressed
    onto ``tau_hr[i + shift]`` with ``shift = round(k1 * rate)``.
    """
    return calibrate_hte_sessions([(frames, tau_hr)], k1, rate)


def calibrate_hte_sessions(sessions, k1: float = 0.2, rate: float = 500.0) -> HteFit:
    """Pooled fit over several ``(frames, tau_hr)`` sessions, each lead-shifted on its own."""
    shift = int(round(k1 * rate))
    Xs, ys = [], []
    for frames, tau in sessions:
        ch = _as_channels(frames)
        tau = np.asarray(tau, dtype=float)
        if ch.shape[1] != len(tau):
            raise ValueError(f"{ch.shape[1]} frames but {len(tau)} torque samples")
        X, y = _lead_aligned(ch, tau, shift)
        Xs.append(X)
        ys.append(y)
    return _fit_design(np.vstack(Xs), np.concatenate(ys))


def frames_from_arrays(t: Sequence[float], ch1: Sequence[float], ch2: Sequence[float]) -> list[EmgFrame]:
    return [EmgFrame(float(a), float(b), float(ts)) for ts, a, b in zip(t, ch1, ch2)]


@dataclass
class Recording:
    """Raw calibration recording: EMG at ``fs`` with the exoskeleton torque held per sample."""
    t: np.ndarray
    ch1_raw: np.ndarray
    ch2_raw: np.ndarray
    tau_e: np.ndarray

    COLUMNS = ("t", "ch1_raw", "ch2_raw", "tau_e")

    def to_csv(self, path):
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(self.COLUMNS)
                for row in zip(self.t, self.ch1_raw, self.ch2_raw, self.tau_e):
                    w.writerow([repr(float(v)) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write recording {path}: {exc}") from exc

    @classmethod
    def from_csv(cls, path) -> "Recording":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(h.strip() for h in next(reader))
            if header != cls.COLUMNS:
                raise ValueError(f"{path}: expected columns {cls.COLUMNS}, got {header}")
            arr = np.array([[float(v) for v in row] for row in reader], dtype=float)
        arr = arr.reshape(-1, 4)
        return cls(*(arr[:, i].copy() for i in range(4)))


def resample_hold(t_src: np.ndarray, values: np.ndarray, rate: float, n: int | None = None) -> np.ndarray:
    """Latest source sample at or before each ``k / rate`` (zero-order hold)."""
    t_src = np.asarray(t_src, dtype=float)
    if n is None:
        n = int(np.floor(t_src[-1] * rate + 1e-9)) + 1
    grid = np.arange(n) / rate
    idx = np.searchsorted(t_src, grid + 1e-12, side="right") - 1
    return np.asarray(values)[..., np.clip(idx, 0, len(t_src) - 1)]


def recording_session(relaxed: Recording, active: Recording, rate: float = 500.0,
                      period: float | None = None, spec: FilterSpec = FilterSpec(),
                      skip: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Envelopes and superposition reference torque at the controller rate.

    ``skip`` seconds at the start are dropped while the envelope filter
    settles (default ``spec.settling_time()``).
    """
    n = min(int(np.floor(relaxed.t[-1] * rate + 1e-9)), int(np.floor(active.t[-1] * rate + 1e-9))) + 1
    env = process_emg(np.vstack([active.ch1_raw, active.ch2_raw]), spec)
    env = resample_hold(active.t, env, rate, n)
    tau_rel = resample_hold(relaxed.t, relaxed.tau_e, rate, n)
    tau_act = resample_hold(active.t, active.tau_e, rate, n)
    per = None if period is None else int(round(period * rate))
    tau_hr = reference_torque(tau_rel, tau_act, per)
    start = int(round((spec.settling_time() if skip is None else skip) * rate))
    return env[:, start:], tau_hr[start:]


def calibrate_from_recordings(relaxed: Recording, active, k1: float = 0.2, rate: float = 500.0,
                              period: float | None = None, spec: FilterSpec = FilterSpec(),
                              skip: float | None = None) -> HteFit:
    """Fit the torque model from raw recordings.

    ``active`` is one recording or a list of them (e.g. an extension and a
    flexion session, so both channels are excited); each is referenced to
    the same relaxed session.
    """
    if isinstance(active, Recording):
        active = [active]
    sessions = [recording_session(relaxed, a, rate, period, spec, skip) for a in active]
    return calibrate_hte_sessions(sessions, k1, rate)
