import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aanexo.fuzzy import (
    FuzzyConfig,
    MembershipParams,
    check_membership_budget,
    infer,
    likelihoods,
    membership,
)

# Empirical Lipschitz constants of m on tau in [-25, 25], v in [-2, 2]
# (dense-grid finite differences: 1.187 and 3.956), with headroom.
LIP_TAU = 1.3
LIP_VEL = 4.2


class TestMembership:
    def test_sigmoid_center(self):
        assert membership(1.0, MembershipParams("sigmoidal", a=4.0, c=1.0)) == 0.5

    def test_gaussian_peak(self):
        assert membership(0.3, MembershipParams("gaussian", c=0.3, sigma=0.1)) == 1.0

    def test_sigmoid_tail(self):
        v = membership(5.0, MembershipParams("sigmoidal", a=4.0, c=1.0))
        assert v == pytest.approx(0.9999998874648379, abs=1e-12)

    def test_gaussian_formula(self):
        p = MembershipParams("gaussian", c=0.0, sigma=0.1)
        assert membership(0.1, p) == pytest.approx(math.exp(-0.5))

    @pytest.mark.parametrize("kw", [dict(kind="gaussian", sigma=0.0), dict(kind="sigmoidal", a=0.0),
                                    dict(kind="triangular")])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            MembershipParams(**kw)

    @given(x=st.floats(-1e6, 1e6), a=st.floats(-50, 50).filter(lambda a: a != 0), c=st.floats(-5, 5))
    def test_sigmoid_in_unit_interval(self, x, a, c):
        v = membership(x, MembershipParams("sigmoidal", a=a, c=c))
        assert 0.0 <= v <= 1.0

    def test_vectorised(self):
        p = FuzzyConfig().vel_zero
        xs = np.linspace(-1, 1, 11)
        assert np.allclose(membership(xs, p), [membership(x, p) for x in xs])


class TestInfer:
    def test_assist(self):
        r = infer(5.0, 0.785)
        assert r.mu_A == pytest.approx(0.999998765019859, abs=1e-6)
        assert r.mu_S == pytest.approx(2.0596112440626586e-08, abs=1e-6)
        assert r.m == pytest.approx(0.500000596893958, abs=1e-6)

    def test_safety(self):
        r = infer(-5.0, 0.785)
        assert r.mu_S == pytest.approx(0.9999987650199005, abs=1e-6)
        assert r.mu_A == pytest.approx(2.0596070864493344e-08, abs=1e-6)
        assert r.m == pytest.approx(1.2246820640937628e-06, abs=1e-6)

    def test_idle_tails(self):
        r = infer(0.0, 0.785)
        assert r.mu_A == pytest.approx(0.017986190143324518, abs=1e-6)
        assert r.mu_S == pytest.approx(0.01798619014332601, abs=1e-6)
        assert r.m == pytest.approx(0.9730207147850117, abs=1e-6)

    def test_dead_zone_zeroes_idle_likelihoods(self):
        r = infer(0.0, 0.785, FuzzyConfig(dead_zone=0.5))
        assert (r.mu_A, r.mu_S, r.m) == (0.0, 0.0, 1.0)

    def test_penalty_bounds(self):
        with pytest.raises(ValueError):
            FuzzyConfig(p_assist=1.5)

    def test_m_formula(self):
        cfg = FuzzyConfig(p_assist=0.3, p_safety=0.6)
        r = infer(2.0, -0.4, cfg)
        assert r.m == pytest.approx(1 - (0.3 * r.mu_A + 0.6 * r.mu_S))

    @given(tau=st.floats(-100, 100).filter(lambda t: abs(t) >= 3),
           v=st.floats(-2, 2).filter(lambda v: abs(v) >= 0.3))
    def test_mutual_exclusion(self, tau, v):
        r = infer(tau, v)
        assert min(r.mu_A, r.mu_S) < 0.01

    @given(tau=st.floats(-25, 25), v=st.floats(-2, 2))
    def test_mirror_symmetry(self, tau, v):
        a = infer(tau, v)
        b = infer(-tau, -v)
        assert a.mu_A == pytest.approx(b.mu_A, abs=1e-12)
        assert a.mu_S == pytest.approx(b.mu_S, abs=1e-12)

    def test_m_in_unit_interval_on_grid(self):
        tau = np.linspace(-25, 25, 1000)
        v = np.linspace(-2, 2, 1000)
        mu_a, mu_s, m = likelihoods(tau[:, None], v[None, :])
        assert m.size == 10 ** 6
        assert m.min() >= 0.0 and m.max() <= 1.0
        assert mu_a.min() >= 0 and mu_s.min() >= 0

    def test_lipschitz(self):
        tau = np.linspace(-25, 25, 2001)
        v = np.linspace(-2, 2, 2001)
        _, _, m = likelihoods(tau[:, None], v[None, :])
        assert np.abs(np.diff(m, axis=0)).max() / (tau[1] - tau[0]) <= LIP_TAU
        assert np.abs(np.diff(m, axis=1)).max() / (v[1] - v[0]) <= LIP_VEL


class TestBudget:
    def test_default_parameters_pass(self):
        # The velocity memberships overlap: the scan finds 1.238 at v = 0,
        # above the 1.02 allowance.  Kept as a record of the shortfall.
        report = check_membership_budget()
        assert report.passed, str(report)

    def test_default_torque_axis_within_one(self):
        report = check_membership_budget()
        assert report.torque_worst <= 1.0 + 1e-12

    def test_default_velocity_axis_worst_point(self):
        report = check_membership_budget()
        assert report.velocity_worst == pytest.approx(1.2384058440442351, abs=1e-9)
        assert abs(report.velocity_worst_at) < 1e-9

    def test_overlapping_torque_sigmoids_fail(self):
        cfg = FuzzyConfig(torque_neg=MembershipParams("sigmoidal", a=-4.0, c=0.1),
                          torque_pos=MembershipParams("sigmoidal", a=4.0, c=-0.1))
        report = check_membership_budget(cfg)
        assert not report.passed
        assert report.torque_worst == pytest.approx(1.197375320224904, abs=1e-9)
        assert abs(report.torque_worst_at) < 1e-3
        assert "torque" in " ".join(report.notes)

    @pytest.mark.parametrize("p", [FuzzyConfig().torque_pos, FuzzyConfig().vel_zero, FuzzyConfig().vel_neg])
    def test_single_membership_bounded(self, p):
        assert membership(np.linspace(-25, 25, 5001), p).max() <= 1.0

    def test_narrow_velocity_set_passes(self):
        cfg = FuzzyConfig(vel_zero=MembershipParams("gaussian", c=0.0, sigma=0.05),
                          vel_neg=MembershipParams("sigmoidal", a=-40.0, c=-0.2),
                          vel_pos=MembershipParams("sigmoidal", a=40.0, c=0.2))
        assert check_membership_budget(cfg).passed

    @settings(max_examples=30, deadline=None)
    @given(shift=st.floats(0.0, 3.0))
    def test_separated_torque_sigmoids_pass_torque_axis(self, shift):
        cfg = FuzzyConfig(torque_neg=MembershipParams("sigmoidal", a=-4.0, c=-shift),
                          torque_pos=MembershipParams("sigmoidal", a=4.0, c=shift))
        assert check_membership_budget(cfg, resolution=1e-2).torque_worst <= 1.0 + 1e-12
