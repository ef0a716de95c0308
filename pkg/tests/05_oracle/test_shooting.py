import numpy as np
import pytest

from carnot_fbp.contracts import InvalidArgumentError
from carnot_fbp.model import ModelParams
from carnot_fbp.oracle import ScanAxis, dense_scan, oracle_energy, shoot_free_boundary, shoot_singular


class TestSingularShooting:
    """-u'' = beta u^-delta on (0, L) by slope shooting."""

    def test_parabola_limit(self):
        """Verify delta = 1e-6, beta = 1 peaks at 1/8 within 1e-4."""
        profile = shoot_singular(1.0, 1e-6, 2001)
        assert profile.max_value == pytest.approx(0.125, abs=1e-4)

    def test_symmetric_profile(self):
        """Verify the profile is symmetric about L/2 within 1e-8."""
        profile = shoot_singular(0.7, 0.5, 1001)
        assert np.max(np.abs(profile.u - profile.u[::-1])) <= 1e-8

    def test_closed_form_peak(self):
        """Verify delta = 1/2, beta = 1 peaks at (3/8)^(4/3), the first-integral value."""
        profile = shoot_singular(1.0, 0.5, 2001)
        assert profile.max_value == pytest.approx((3.0 / 8.0) ** (4.0 / 3.0), rel=1e-6)

    def test_self_convergence(self):
        """Verify tightening the integrator tolerance moves the profile by <= 1e-6 relative."""
        profile = shoot_singular(1.0, 0.5, 1001)
        assert profile.self_convergence <= 1e-6

    def test_interval_length_scaling(self):
        """Verify u_L(x) = L^(2/(1+delta)) u_1(x / L)."""
        delta = 0.5
        unit = shoot_singular(1.0, delta, 2001)
        wide = shoot_singular(1.0, delta, 2001, length=2.0)
        assert wide.max_value == pytest.approx(2.0 ** (2.0 / (1.0 + delta)) * unit.max_value, rel=1e-6)

    def test_needs_fine_profiles(self):
        """Verify n < 1000 is rejected."""
        with pytest.raises(InvalidArgumentError):
            shoot_singular(1.0, 0.5, 999)

    def test_rejects_bad_delta(self):
        """Verify delta outside (0,1) is rejected."""
        with pytest.raises(InvalidArgumentError):
            shoot_singular(1.0, 1.2, 1001)


@pytest.fixture(scope="module")
def pair():
    params = ModelParams(lam=60.0, beta=0.05, delta=0.5)
    return params, shoot_free_boundary(params, 2001)


class TestFreeBoundaryShooting:
    """Matched outer/inner profiles with the gradient jump at u = 1."""

    def test_jump_identity(self, pair):
        """Verify (u'+)^2 - (u'-)^2 = 2 at the crossings within 1e-8."""
        _, (u0, u1) = pair
        assert u0.jump_deviation() <= 1e-8
        assert u1.jump_deviation() <= 1e-8

    def test_branch_ordering(self, pair):
        """Verify u1 <= u0 pointwise and u1 crosses the level later than u0."""
        _, (u0, u1) = pair
        assert np.all(u1.u <= u0.u + 1e-8)
        assert u0.crossings[0] < u1.crossings[0]

    def test_crossings_are_symmetric(self, pair):
        """Verify the two crossings of each branch mirror about 1/2."""
        _, (u0, u1) = pair
        for profile in (u0, u1):
            a, b = profile.crossings
            assert a + b == pytest.approx(1.0)

    def test_energy_separation(self, pair):
        """Verify E(u0) < -L < E(u1) with the model quadrature."""
        params, (u0, u1) = pair
        assert oracle_energy(params, u0) < -1.0 < oracle_energy(params, u1)

    def test_profiles_are_self_consistent(self, pair):
        """Verify both branches pass the tolerance-tightening check."""
        _, (u0, u1) = pair
        assert u0.self_convergence <= 1e-6
        assert u1.self_convergence <= 1e-6

    def test_no_pair_for_small_lambda(self):
        """Verify lambda far below threshold yields a geometry failure."""
        from carnot_fbp.contracts import GeometryFailureError

        with pytest.raises(GeometryFailureError):
            shoot_free_boundary(ModelParams(lam=1.0, beta=0.05), 1001, samples=120)


class TestDenseScan:
    """Exhaustive grid evaluation."""

    def test_argmin(self):
        """Verify argmin of (x - 0.3)^2 + (y + 0.2)^2 lands on the nearest grid node."""
        result = dense_scan(
            lambda x, y: (x - 0.3) ** 2 + (y + 0.2) ** 2,
            [ScanAxis(0.0, 1.0, 11), ScanAxis(-1.0, 1.0, 21)],
        )
        assert result.argument == pytest.approx((0.3, -0.2))
        assert result.value == pytest.approx(0.0, abs=1e-24)

    def test_argmax(self):
        """Verify argmax mode."""
        result = dense_scan(lambda x: -np.abs(x - 2.0), [ScanAxis(0.0, 4.0, 41)], mode="argmax")
        assert result.argument[0] == pytest.approx(2.0)

    def test_threshold(self):
        """Verify threshold returns the largest first-axis value with a hit."""
        result = dense_scan(lambda a, t: a <= t, [ScanAxis(0.0, 10.0, 11), ScanAxis(0.0, 5.0, 6)], "threshold")
        assert result.value == 5.0

    def test_threshold_without_hits(self):
        """Verify nan when the predicate never holds."""
        result = dense_scan(lambda x: x < 0.0, [ScanAxis(1.0, 2.0, 5)], "threshold")
        assert np.isnan(result.value)

    def test_rejects_infinite_range(self):
        """Verify non-finite ranges are rejected."""
        with pytest.raises(InvalidArgumentError):
            dense_scan(lambda x: x, [ScanAxis(0.0, np.inf, 5)])

    def test_unknown_mode(self):
        """Verify unknown modes are rejected."""
        with pytest.raises(InvalidArgumentError):
            dense_scan(lambda x: x, [ScanAxis(0.0, 1.0, 5)], mode="median")
