"""Seated 1-DOF knee exoskeleton with a rigidly coupled human shank.

Dynamics::

    J * theta_dd + B * theta_d + tau_g * sin(theta) - tau_h = tau_e

``theta = 0`` is the shank hanging vertically; positive angles are extension.
Also holds the scripted synthetic subject that supplies human torque and the
matching two-channel EMG.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import signal

from .emg_hte import HTE_MODELS, EmgFrame, FilterSpec, HteModel


@dataclass(frozen=True)
class PlantParams:
    inertia: float
    damping: float
    gravity_torque: float

    def __post_init__(self):
        vals = (self.inertia, self.damping, self.gravity_torque)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite plant parameters {vals}")
        if self.inertia <= 0 or self.damping < 0 or self.gravity_torque < 0:
            raise ValueError(f"require J > 0, B >= 0, tau_g >= 0; got {vals}")

    def __add__(self, other: "PlantParams") -> "PlantParams":
        return PlantParams(self.inertia + other.inertia, self.damping + other.damping,
                           self.gravity_torque + other.gravity_torque)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.inertia, self.damping, self.gravity_torque)


EXO_PARAMS = PlantParams(0.0377, 0.0207, 1.7536)
HUMAN_PARAMS = {
    "S1": PlantParams(0.4315, 0.1676, 14.256),
    "S2": PlantParams(0.1927, 0.1534, 7.5008),
    "S3": PlantParams(0.3060, 0.1575, 10.595),
}


def combined_params(subject: str) -> PlantParams:
    return EXO_PARAMS + HUMAN_PARAMS[subject]


@dataclass(frozen=True)
class JointState:
    theta: float
    theta_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot])


def acceleration(theta, theta_dot, params: PlantParams, tau_e, tau_h):
    J, B, g = params.inertia, params.damping, params.gravity_torque
    return (tau_e + tau_h - B * theta_dot - g * np.sin(theta)) / J


def rk4_step(f: Callable, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + dt / 2, x + dt / 2 * k1)
    k3 = f(t + dt / 2, x + dt / 2 * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def step_dynamics(state: JointState, params: PlantParams, tau_e: float, tau_h: float,
                  dt: float) -> JointState:
    """Advance one fixed RK4 step with both torques held over the step."""
    if not (0 < dt <= 0.01):
        raise ValueError(f"dt must lie in (0, 0.01] s, got {dt}")
    inputs = (state.theta, state.theta_dot, tau_e, tau_h)
    if not all(math.isfinite(v) for v in inputs):
        raise ValueError(f"non-finite input to plant step: state={state}, tau_e={tau_e}, tau_h={tau_h}")
    J, B, g = params.inertia, params.damping, params.gravity_torque
    u = tau_e + tau_h

    def f(th, om):
        return om, (u - B * om - g * math.sin(th)) / J

    th, om = state.theta, state.theta_dot
    a1, b1 = f(th, om)
    a2, b2 = f(th + dt / 2 * a1, om + dt / 2 * b1)
    a3, b3 = f(th + dt / 2 * a2, om + dt / 2 * b2)
    a4, b4 = f(th + dt * a3, om + dt * b3)
    return JointState(th + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
                      om + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4))


def mechanical_energy(state: JointState, params: PlantParams) -> float:
    return 0.5 * params.inertia * state.theta_dot ** 2 - params.gravity_torque * math.cos(state.theta)


class Condition(str, enum.Enum):
    R = "R"
    EA = "EA"
    ER = "ER"
    FA = "FA"
    FR = "FR"

    @property
    def phase(self) -> str | None:
        return None if self is Condition.R else self.value[0]

    @property
    def assists(self) -> bool:
        return self.value.endswith("A")


@dataclass(frozen=True)
class InvolvementCondition:
    """Scripted human behaviour.

    Without ``window`` the torque is active during the extension (first half)
    or flexion (second half) of every ``period``-second cycle.  With
    ``window=(t0, t1)`` it is a single pulse in absolute trial time.
    """
    kind: Condition = Condition.R
    magnitude: float = 14.0
    window: tuple[float, float] | None = None
    ramp: float = 0.6
    period: float = 4.0
    # reference speed at which the human reaches full effort
    speed_saturation: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", Condition(self.kind))
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")
        if self.window is not None and not 0 <= self.window[0] < self.window[1]:
            raise ValueError(f"bad window {self.window}")
        if self.ramp < 0 or self.period <= 0 or self.speed_saturation <= 0:
            raise ValueError("ramp >= 0, period > 0 and speed_saturation > 0 required")


def _raised_cosine_window(t: float, t0: float, t1: float, ramp: float) -> float:
    if t <= t0 or t >= t1:
        return 0.0
    ramp = min(ramp, (t1 - t0) / 2)
    if ramp == 0:
        return 1.0
    if t < t0 + ramp:
        return 0.5 - 0.5 * math.cos(math.pi * (t - t0) / ramp)
    if t > t1 - ramp:
        return 0.5 - 0.5 * math.cos(math.pi * (t1 - t) / ramp)
    return 1.0


def activation_window(condition: InvolvementCondition, t: float) -> float:
    """Effort envelope in [0, 1] for the condition at trial time ``t``."""
    if condition.kind is Condition.R:
        return 0.0
    if condition.window is not None:
        return _raised_cosine_window(t, *condition.window, condition.ramp)
    half = condition.period / 2
    tc = t % condition.period
    if condition.kind.phase == "E":
        return _raised_cosine_window(tc, 0.0, half, condition.ramp)
    return _raised_cosine_window(tc, half, condition.period, condition.ramp)


def human_torque(condition: InvolvementCondition, t: float, theta_r_dot: float) -> float:
    """Voluntary knee torque of the scripted subject.

    Assisting subjects push along the reference velocity, resisting subjects
    against it.  Effort saturates once ``|theta_r_dot|`` exceeds
    ``speed_saturation``, so a stationary reference draws no effort.
    """
    w = activation_window(condition, t)
    if w == 0.0:
        return 0.0
    direction = max(-1.0, min(1.0, theta_r_dot / condition.speed_saturation))
    sign = 1.0 if condition.kind.assists else -1.0
    return sign * condition.magnitude * w * direction


def synth_emg(tau_h_future: float, model: HteModel, noise_level: float = 0.0,
              rng: np.random.Generator | None = None, t: float = 0.0) -> EmgFrame:
    """Envelope pair that the torque model maps back onto ``tau_h_future``.

    Torque above the offset drives the extensor channel only, below it the
    flexor channel only.  ``noise_level`` is the additive noise standard
    deviation expressed in N*m of equivalent torque per channel.
    """
    excess = tau_h_future - model.b0
    ch1 = max(0.0, excess) / model.a1
    ch2 = max(0.0, -excess) / abs(model.a2)
    if noise_level > 0:
        if rng is None:
            raise ValueError("noise_level > 0 needs an rng")
        n1, n2 = rng.standard_normal(2)
        ch1 = max(0.0, ch1 + noise_level * n1 / model.a1)
        ch2 = max(0.0, ch2 + noise_level * n2 / abs(model.a2))
    return EmgFrame(ch1, ch2, t)


class RawEmgSynth:
    """Band-limited carrier noise amplitude-modulated by target envelopes.

    The carrier is normalised so that rectifying and low-passing the raw
    signal gives back the modulating envelope, i.e. the processing chain has
    unit gain on the synthetic subject.
    """

    def __init__(self, duration: float, seed: int, spec: FilterSpec = FilterSpec()):
        self.fs = spec.fs
        n = int(math.ceil(duration * spec.fs)) + 1
        rng = np.random.default_rng(seed)
        white = rng.standard_normal((2, n + 4096))
        sos = signal.butter(4, [20.0, 450.0], btype="bandpass", fs=spec.fs, output="sos")
        carrier = signal.sosfilt(sos, white, axis=1)[:, 4096:]
        carrier /= np.mean(np.abs(carrier), axis=1, keepdims=True)
        self.carrier = carrier
        self._next = 0

    def samples_until(self, t: float, envelope: tuple[float, float]) -> np.ndarray:
        """Raw samples with timestamps up to and including ``t``."""
        stop = min(int(math.floor(t * self.fs + 1e-9)) + 1, self.carrier.shape[1])
        block = self.carrier[:, self._next:stop] * np.asarray(envelope)[:, None]
        self._next = max(self._next, stop)
        return block


@dataclass(frozen=True)
class SubjectProfile:
    name: str
    human: PlantParams
    hte: HteModel
    emg_lead: float = 0.2
    noise_level: float = 0.5

    def __post_init__(self):
        if self.emg_lead < 0 or self.noise_level < 0:
            raise ValueError("emg_lead and noise_level must be >= 0")

    @property
    def combined(self) -> PlantParams:
        return EXO_PARAMS + self.human


def subject_profile(name: str, **overrides) -> SubjectProfile:
    prof = SubjectProfile(name=name, human=HUMAN_PARAMS[name], hte=HTE_MODELS[name])
    return replace(prof, **overrides) if overrides else prof
