"""Assistance-mode inference from estimated human torque and reference speed.

Two torque memberships (Negative, Positive) and three velocity memberships
(Negative, Zero, Positive) are combined with Larsen product implication:

    mu_A = fN(tau) fN(v) + fP(tau) fP(v)
    mu_S = fN(tau) (fZ(v) + fP(v)) + fP(tau) (fZ(v) + fN(v))
    m    = 1 - (p_A mu_A + p_S mu_S)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MembershipParams:
    kind: str
    a: float = 0.0
    c: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.sigma > 0:
                raise ValueError(f"gaussian membership needs sigma > 0, got {self.sigma}")
        elif self.kind == "sigmoidal":
            if self.a == 0:
                raise ValueError("sigmoidal membership needs a != 0")
        else:
            raise ValueError(f"unknown membership kind {self.kind!r}")


def membership(x, params: MembershipParams):
    """Membership degree of ``x``; accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    if params.kind == "gaussian":
        out = np.exp(-((x - params.c) ** 2) / (2 * params.sigma ** 2))
    else:
        # logistic via tanh: no overflow warnings for large |a (x - c)|
        out = 0.5 * (1.0 + np.tanh(0.5 * params.a * (x - params.c)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FuzzyConfig:
    torque_neg: MembershipParams = MembershipParams("sigmoidal", a=-4.0, c=-1.0)
    torque_pos: MembershipParams = MembershipParams("sigmoidal", a=4.0, c=1.0)
    vel_neg: MembershipParams = MembershipParams("sigmoidal", a=-20.0, c=-0.1)
    vel_zero: MembershipParams = MembershipParams("gaussian", c=0.0, sigma=0.1)
    vel_pos: MembershipParams = MembershipParams("sigmoidal", a=20.0, c=0.1)
    p_assist: float = 0.5
    p_safety: float = 1.0
    # |tau_hat| below this forces both likelihoods to zero; 0 disables it
    dead_zone: float = 0.0

    def __post_init__(self):
        for p in (self.p_assist, self.p_safety):
            if not 0 <= p <= 1:
                raise ValueError(f"penalties must lie in [0, 1], got {p}")
        if self.dead_zone < 0:
            raise ValueError("dead_zone must be >= 0")


@dataclass(frozen=True)
class ModeLikelihoods:
    mu_A: float
    mu_S: float
    m: float


def likelihoods(tau_h_hat, theta_r_dot, config: FuzzyConfig = FuzzyConfig()):
    """Vectorised ``(mu_A, mu_S, m)``; broadcasting over both inputs."""
    tau = np.asarray(tau_h_hat, dtype=float)
    v = np.asarray(theta_r_dot, dtype=float)
    tn = membership(tau, config.torque_neg)
    tp = membership(tau, config.torque_pos)
    vn = membership(v, config.vel_neg)
    vz = membership(v, config.vel_zero)
    vp = membership(v, config.vel_pos)
    mu_a = tn * vn + tp * vp
    mu_s = tn * (vz + vp) + tp * (vz + vn)
    if config.dead_zone > 0:
        quiet = np.abs(tau) < config.dead_zone
        mu_a = np.where(quiet, 0.0, mu_a)
        mu_s = np.where(quiet, 0.0, mu_s)
    m = np.clip(1.0 - (config.p_assist * mu_a + config.p_safety * mu_s), 0.0, 1.0)
    return mu_a, mu_s, m


def infer(tau_h_hat: float, theta_r_dot: float, config: FuzzyConfig = FuzzyConfig()) -> ModeLikelihoods:
    mu_a, mu_s, m = likelihoods(tau_h_hat, theta_r_dot, config)
    return ModeLikelihoods(float(mu_a), float(mu_s), float(m))


@dataclass
class BudgetReport:
    passed: bool
    torque_worst: float
    torque_worst_at: float
    velocity_worst: float
    velocity_worst_at: float
    tolerance: float
    notes: list[str] = field(default_factory=list)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: torque-axis max sum {self.torque_worst:.4f} at {self.torque_worst_at:+.3f} N*m; "
                f"velocity-axis max sum {self.velocity_worst:.4f} at {self.velocity_worst_at:+.3f} rad/s "
                f"(limit 1 + {self.tolerance})")


def check_membership_budget(config: FuzzyConfig = FuzzyConfig(),
                            torque_range=(-25.0, 25.0), velocity_range=(-2.0, 2.0),
                            resolution: float = 1e-3, tolerance: float = 0.02) -> BudgetReport:
    """Grid scan that the memberships on each axis never sum above one.

    Torque axis: fN + fP <= 1.  Velocity axis: fN + fZ + fP <= 1 + tolerance.
    """
    tau = np.arange(torque_range[0], torque_range[1] + resolution / 2, resolution)
    v = np.arange(velocity_range[0], velocity_range[1] + resolution / 2, resolution)
    ts = membership(tau, config.torque_neg) + membership(tau, config.torque_pos)
    vs = (membership(v, config.vel_neg) + membership(v, config.vel_zero)
          + membership(v, config.vel_pos))
    it, iv = int(np.argmax(ts)), int(np.argmax(vs))
    report = BudgetReport(
        passed=bool(ts[it] <= 1.0 + 1e-12 and vs[iv] <= 1.0 + tolerance),
        torque_worst=float(ts[it]), torque_worst_at=float(tau[it]),
        velocity_worst=float(vs[iv]), velocity_worst_at=float(v[iv]),
        tolerance=tolerance,
    )
    if ts[it] > 1.0 + 1e-12:
        report.notes.append("torque memberships overlap above one")
    if vs[iv] > 1.0 + tolerance:
        report.notes.append("velocity memberships overlap above one")
    return report
