import numpy as np
import pytest

from carnot_fbp.auxiliary import build_cutoff
from carnot_fbp.contracts import GeometryFailureError, InvalidArgumentError, NoSolutionError, SolverError
from carnot_fbp.geometry import ScalarField, group_model, unit_grid
from carnot_fbp.model import EpsEnergy, ModelParams
from carnot_fbp.solvers import (
    _redistribute,
    build_truncated,
    check_eps_threshold,
    critical_point_certificate,
    locate_lambda_star,
    minimize_energy,
    mountain_pass,
    mountain_pass_with_rim,
    multi_start_minimize,
    ordering_check,
    rim_estimate,
    straight_path,
    truncation_bound_excess,
)


def _setup(n=33, **overrides):
    g = group_model("euclid1")
    grid = unit_grid(g, n)
    prm = ModelParams(**overrides)
    return g, grid, prm, build_cutoff(g, grid, prm)


def _sine(grid, amplitude):
    return ScalarField(grid, amplitude * np.sin(np.pi * grid.coordinates[:, 0]))


class TestMinimize:
    """Preconditioned NCG with the Newton finish."""

    def test_trivial_problem(self):
        """Verify lambda = beta = 0 is solved by zero with energy 0."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        u, report = minimize_energy(g, grid, prm, ctx)
        assert report.converged
        assert not np.any(u.values)
        assert report.energy_eps == 0.0

    def test_descent_is_monotone(self):
        """Verify the recorded energies never increase and the solve converges."""
        g, grid, prm, ctx = _setup(65, lam=60.0, beta=0.05)
        u, report = minimize_energy(g, grid, prm, ctx)
        history = np.asarray(report.history)
        scale = max(1.0, float(np.max(np.abs(history))))
        assert report.converged
        assert np.all(np.diff(history) <= 1e-10 * scale)
        assert u.vanishes_on_boundary()

    def test_restarts_floor(self):
        """Verify fewer than 8 restarts are rejected."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        with pytest.raises(InvalidArgumentError):
            multi_start_minimize(g, grid, prm, ctx, restarts=4)


class TestLambdaStar:
    """Bisection on the m1 < -H(Omega) predicate."""

    def test_linear_estimator(self):
        """Verify m1 = -0.1 lambda brackets lambda* = 10 within the relative tolerance."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        lo, hi = locate_lambda_star(g, grid, prm, ctx, 0.0, 100.0, rel_tol=1e-3, estimator=lambda lam: -0.1 * lam)
        assert lo <= 10.0 <= hi
        assert hi - lo <= 1e-3 * hi

    def test_upper_bound_must_cross(self):
        """Verify an upper bound below lambda* raises NoSolutionError."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        with pytest.raises(NoSolutionError):
            locate_lambda_star(g, grid, prm, ctx, 0.0, 5.0, estimator=lambda lam: -0.1 * lam)

    def test_lower_bound_must_fail(self):
        """Verify a bracket entirely above lambda* is rejected."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        with pytest.raises(NoSolutionError):
            locate_lambda_star(g, grid, prm, ctx, 20.0, 40.0, estimator=lambda lam: -0.1 * lam)


class TestTruncation:
    """E~ agrees with E_eps below the cap and grows at most linearly above it."""

    def test_no_cap_is_the_plain_functional(self):
        """Verify cap=None reproduces E_eps and its gradient."""
        g, grid, prm, ctx = _setup(lam=30.0, beta=0.1, g_kind="affine_power")
        tf = build_truncated(g, grid, prm, ctx, None)
        plain = EpsEnergy(g, grid, prm, ctx)
        x = np.random.default_rng(2).uniform(0.0, 3.0, plain.op.size)
        assert tf.energy(x) == pytest.approx(plain.energy(x), rel=1e-14)
        np.testing.assert_allclose(tf.gradient(x), plain.gradient(x), rtol=1e-13, atol=1e-12)

    def test_g_tilde_vanishes_below_level(self):
        """Verify g~(x, s) = 0 for s <= min(1, cap)."""
        g, grid, prm, ctx = _setup(lam=30.0)
        cap = ScalarField(grid, np.full(grid.num_nodes, 1.5))
        tf = build_truncated(g, grid, prm, ctx, cap)
        for s in (0.0, 0.4, 1.0):
            assert not np.any(tf.g_tilde(np.full(tf.op.size, s)))

    def test_frozen_above_cap(self):
        """Verify g~ is constant past the cap."""
        g, grid, prm, ctx = _setup(lam=30.0, g_kind="power")
        cap = ScalarField(grid, np.full(grid.num_nodes, 1.5))
        tf = build_truncated(g, grid, prm, ctx, cap)
        np.testing.assert_allclose(tf.g_tilde(np.full(tf.op.size, 1.6)), tf.g_tilde(np.full(tf.op.size, 9.0)))

    @pytest.mark.parametrize("kind", ["constant_one", "power", "affine_power"])
    def test_growth_bound(self, kind):
        """Verify G~(x, s) <= a0 (s-1)+ + a1/p (s-1)+^p on sample values."""
        g, grid, prm, ctx = _setup(lam=30.0, g_kind=kind)
        cap = ScalarField(grid, np.full(grid.num_nodes, 1.5))
        tf = build_truncated(g, grid, prm, ctx, cap)
        assert truncation_bound_excess(tf, [0.0, 0.5, 1.0, 1.2, 1.5, 2.0, 5.0, 50.0]) <= 1e-12


class TestMountainPassGuards:
    """Preconditions of the path deformation."""

    def test_zero_endpoint(self):
        """Verify a zero endpoint is rejected."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.0)
        tf = build_truncated(g, grid, prm, ctx, None)
        with pytest.raises(InvalidArgumentError):
            mountain_pass(tf, ScalarField.zeros(grid))

    def test_endpoint_above_origin(self):
        """Verify an endpoint with energy above E~(0) is a geometry failure."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        tf = build_truncated(g, grid, prm, ctx, None)
        with pytest.raises(GeometryFailureError):
            mountain_pass(tf, _sine(grid, 0.5))

    def test_path_needs_points(self):
        """Verify fewer than 16 path points are rejected."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.0)
        tf = build_truncated(g, grid, prm, ctx, None)
        with pytest.raises(InvalidArgumentError):
            mountain_pass(tf, _sine(grid, 3.0), P=8)


class TestPathRedistribution:
    """Arc-length equidistribution of the path points."""

    def test_flat_segment_uses_plain_arc_length(self):
        """Verify equal energies redistribute a straight segment to evenly spaced points."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.05)
        tf = build_truncated(g, grid, prm, ctx, None)
        end = _sine(grid, 2.0).interior
        points = [t * end for t in (0.0, 0.1, 0.2, 1.0)]
        out = _redistribute(tf, points, np.zeros(4))
        assert len(out) == 4
        for p, t in zip(out, (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)):
            np.testing.assert_allclose(p, t * end, atol=1e-12)

    def test_endpoints_stay_put(self):
        """Verify the first and last points survive redistribution on a straight path."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.05)
        tf = build_truncated(g, grid, prm, ctx, None)
        path = straight_path(tf, _sine(grid, 3.0).interior, 16)
        out = _redistribute(tf, path.points, path.energies)
        assert len(out) == path.size
        np.testing.assert_array_equal(out[0], path.points[0])
        np.testing.assert_array_equal(out[-1], path.points[-1])


class TestMountainPass:
    """Minimizer and mountain-pass pair on the unit interval at lambda = 60."""

    @pytest.fixture(scope="class")
    def pair(self):
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.05, epsilon=0.2)
        best = multi_start_minimize(g, grid, prm, ctx)
        tf = build_truncated(g, grid, prm, ctx, best.field)
        u1, report = mountain_pass_with_rim(tf, best.field)
        return tf, best, u1, report

    def test_second_solution_sits_above_the_minimizer(self, pair):
        """Verify E(u1) > E(u0) and E_eps(u1) > E_eps(u0)."""
        _, best, _, report = pair
        assert report.converged
        assert report.energy_exact > best.report.energy_exact
        assert report.energy_eps > best.report.energy_eps

    def test_second_solution_is_critical(self, pair):
        """Verify the random-direction certificate passes for u1 on the truncated functional."""
        tf, _, u1, _ = pair
        assert critical_point_certificate(tf, u1).passed

    def test_pair_is_ordered(self, pair):
        """Verify 0 < u1 <= u0 with distinct fields."""
        _, best, u1, _ = pair
        report = ordering_check(u1, best.field)
        assert report.details["order"] == 0
        assert report.details["positivity"] == 0
        assert report.details["distinct"]

    def test_rim_lies_above_the_origin(self, pair):
        """Verify the rim estimate m2 is positive, so 0 is a strict local minimum."""
        _, _, _, report = pair
        assert report.m2_estimate > 0.0
        assert report.level >= report.m2_estimate

    def test_path_iterations_respect_the_cap(self, pair, caplog):
        """Verify max_iter bounds the path deformation before the Newton polish."""
        tf, best, _, _ = pair
        with caplog.at_level("WARNING", logger="carnot_fbp.solvers"):
            try:
                mountain_pass(tf, best.field, max_iter=1, retries=0)
            except SolverError:
                pass
        assert any("hit 1 iterations" in r.getMessage() for r in caplog.records)


class TestEpsThreshold:
    """eps must sit below eps_0(lambda) once m1 is known."""

    def test_large_eps_is_flagged(self, caplog):
        """Verify eps above the threshold warns and returns False."""
        prm = ModelParams(lam=10.0, p=1.5, epsilon=0.5)
        with caplog.at_level("WARNING", logger="carnot_fbp.solvers"):
            assert not check_eps_threshold(prm, -4.0, 1.0)
        assert any("not below eps_0" in r.getMessage() for r in caplog.records)

    def test_small_eps_passes(self):
        """Verify eps below the threshold is accepted."""
        assert check_eps_threshold(ModelParams(lam=10.0, p=1.5, epsilon=0.1), -4.0, 1.0)

    def test_unknown_m1_is_skipped(self):
        """Verify a NaN m1 skips the check."""
        assert check_eps_threshold(ModelParams(epsilon=0.5), float("nan"), 1.0)


class TestCertificates:
    """Random-direction certificates and the ordering report."""

    def test_zero_is_critical_without_forcing(self):
        """Verify u = 0 passes the certificate when lambda = beta = 0."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        report = critical_point_certificate(EpsEnergy(g, grid, prm, ctx), ScalarField.zeros(grid))
        assert report.passed
        assert report.details["worst_ratio"] == 0.0

    def test_non_critical_point_fails(self):
        """Verify a sine bump is not critical for the pure Dirichlet energy."""
        g, grid, prm, ctx = _setup(lam=0.0, beta=0.0)
        report = critical_point_certificate(EpsEnergy(g, grid, prm, ctx), _sine(grid, 0.5))
        assert not report.passed
        assert report.violations > 0

    def test_rim_below_the_level(self):
        """Verify the rim value at r = 0.1 is r^2/2 when u stays below 1 and beta = 0."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.0)
        tf = build_truncated(g, grid, prm, ctx, None)
        assert rim_estimate(tf, 0.1) == pytest.approx(0.005, rel=1e-9)

    def test_rim_radius_positive(self):
        """Verify radius 0 is rejected."""
        g, grid, prm, ctx = _setup(lam=60.0, beta=0.0)
        with pytest.raises(InvalidArgumentError):
            rim_estimate(build_truncated(g, grid, prm, ctx, None), 0.0)

    def test_ordering_of_distinct_pair(self):
        """Verify u1 = u0 / 2 satisfies every inclusion."""
        grid = unit_grid(group_model("euclid1"), 33)
        u0 = _sine(grid, 3.0)
        report = ordering_check(_sine(grid, 1.5), u0)
        assert report.passed
        assert report.details["distinct"]
        assert report.details["nonempty"]

    def test_coincident_pair_is_flagged(self):
        """Verify u1 = u0 reports zero violations but fails as non-distinct."""
        grid = unit_grid(group_model("euclid1"), 33)
        u0 = _sine(grid, 3.0)
        report = ordering_check(u0, u0)
        assert report.violations == 0
        assert not report.details["distinct"]
        assert not report.passed

    def test_crossed_pair_fails(self):
        """Verify u1 > u0 is counted as an order violation."""
        grid = unit_grid(group_model("euclid1"), 33)
        report = ordering_check(_sine(grid, 3.0), _sine(grid, 1.5))
        assert report.details["order"] > 0
        assert not report.passed
