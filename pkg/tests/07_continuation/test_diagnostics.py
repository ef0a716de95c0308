import numpy as np
import pytest

from carnot_fbp.auxiliary import build_cutoff, solve_singular
from carnot_fbp.continuation import (
    ContinuationSchedule,
    comparison_check,
    energy_sandwich_check,
    extract_free_boundary,
    free_boundary_distance,
    jump_check,
    level_set_report,
    radon_measure_check,
    run_continuation,
    stage_convergence_check,
)
from carnot_fbp.contracts import InvalidArgumentError
from carnot_fbp.geometry import ScalarField, group_model, unit_grid
from carnot_fbp.model import ModelParams
from carnot_fbp.solvers import build_truncated, critical_point_certificate
from carnot_fbp.structures import FreeBoundary, StageReport


def _stage(eps, energy, tolerance=1e-8, sup_delta=float("nan"), lip=1.0):
    return StageReport(
        eps, energy, energy, energy, energy, 0.0, 0.0, lip, lip, sup_delta_u0=sup_delta, tolerance=tolerance
    )


def _kinked(grid, slope_minus, slope_plus):
    """Piecewise linear field through 1 at x = 1/2 with the given one-sided slopes."""
    x = grid.coordinates[:, 0]
    return ScalarField(grid, np.where(x > 0.5, 1.0 + slope_plus * (x - 0.5), 1.0 + slope_minus * (x - 0.5)))


class TestSchedule:
    """eps_0 > eps_1 > ... > 0."""

    def test_geometric(self):
        """Verify the halving schedule has stages + 1 entries."""
        schedule = ContinuationSchedule.geometric(0.2, 6, tolerance=1e-9)
        assert len(schedule) == 7
        assert schedule.eps_list[-1] == pytest.approx(0.2 / 64)
        assert schedule.tolerance(3) == 1e-9

    def test_must_decrease(self):
        """Verify a non-decreasing schedule is rejected."""
        with pytest.raises(InvalidArgumentError):
            ContinuationSchedule((0.1, 0.1, 0.05))

    def test_positive(self):
        """Verify eps <= 0 is rejected."""
        with pytest.raises(InvalidArgumentError):
            ContinuationSchedule((0.1, 0.0))

    def test_tolerance_per_stage(self):
        """Verify the tolerance list must match the schedule length."""
        with pytest.raises(InvalidArgumentError):
            ContinuationSchedule((0.2, 0.1), (1e-8,))

    def test_default_tolerance(self):
        """Verify a schedule without tolerances defers to the solver default."""
        assert ContinuationSchedule((0.2, 0.1)).tolerance(0) is None


class TestFreeBoundary:
    """Edge crossings of u = 1 and the one-sided gradient traces."""

    def test_linear_crossing(self):
        """Verify u = 2x crosses 1 exactly once at x = 1/2."""
        grid = unit_grid(group_model("euclid1"), 100)
        u = ScalarField(grid, 2.0 * grid.coordinates[:, 0])
        fb = extract_free_boundary(group_model("euclid1"), grid, u)
        assert fb.num_cells == 1
        assert fb.location[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert fb.normal[0, 0] == pytest.approx(1.0)

    def test_empty_when_below_level(self):
        """Verify u <= 1 has no free boundary."""
        grid = unit_grid(group_model("euclid1"), 50)
        fb = extract_free_boundary(group_model("euclid1"), grid, ScalarField(grid, np.full(grid.num_nodes, 0.9)))
        assert fb.is_empty()

    def test_jump_of_exact_kink(self):
        """Verify slopes 1 and sqrt(3) give a zero jump deviation."""
        g = group_model("euclid1")
        grid = unit_grid(g, 100)
        fb = extract_free_boundary(g, grid, _kinked(grid, 1.0, np.sqrt(3.0)))
        stats = jump_check(fb)
        assert fb.grad_plus_sq[0] == pytest.approx(3.0, rel=1e-10)
        assert fb.grad_minus_sq[0] == pytest.approx(1.0, rel=1e-10)
        assert stats["max"] <= 1e-9

    def test_jump_of_smooth_crossing(self):
        """Verify equal slopes miss the jump by exactly 2."""
        g = group_model("euclid1")
        grid = unit_grid(g, 100)
        stats = jump_check(extract_free_boundary(g, grid, _kinked(grid, 1.0, 1.0)))
        assert stats["mean"] == pytest.approx(2.0, rel=1e-10)

    def test_jump_check_needs_crossings(self):
        """Verify an empty free boundary is rejected."""
        with pytest.raises(InvalidArgumentError):
            jump_check(FreeBoundary.empty(1))

    def test_distance_to_boundary(self):
        """Verify {2 sin(pi x) >= 1} starts at the first node past 1/6."""
        grid = unit_grid(group_model("euclid1"), 101)
        u = ScalarField(grid, 2.0 * np.sin(np.pi * grid.coordinates[:, 0]))
        assert free_boundary_distance(grid, u) == pytest.approx(0.17)


class TestEnergySandwich:
    """Stage energies bracketed by E(u) and E(u) + band."""

    def test_consistent_stages(self):
        """Verify matching energies pass for lambda = 0 and u = 0."""
        g = group_model("euclid1")
        grid = unit_grid(g, 33)
        prm = ModelParams(lam=0.0, beta=0.0)
        stages = [_stage(0.2 * 0.5**j, 0.0) for j in range(4)]
        report = energy_sandwich_check(g, grid, prm, ScalarField.zeros(grid), stages)
        assert report.passed
        assert len(report.details["stages"]) == 3

    def test_too_low_stage_energy(self):
        """Verify stage energies far below E(u) are flagged on every stage."""
        g = group_model("euclid1")
        grid = unit_grid(g, 33)
        prm = ModelParams(lam=0.0, beta=0.0)
        stages = [_stage(0.2 * 0.5**j, -1.0) for j in range(3)]
        report = energy_sandwich_check(g, grid, prm, ScalarField.zeros(grid), stages, branch="u1")
        assert not report.passed
        assert report.violations == 3

    def test_needs_three_stages(self):
        """Verify fewer than three stages are rejected."""
        g = group_model("euclid1")
        grid = unit_grid(g, 33)
        with pytest.raises(InvalidArgumentError):
            energy_sandwich_check(g, grid, ModelParams(), ScalarField.zeros(grid), [_stage(0.2, 0.0)])

    def test_stage_convergence(self):
        """Verify decreasing stage deltas with a flat Lipschitz bound pass."""
        stages = [_stage(0.2 * 0.5**j, 0.0, sup_delta=10.0**-j) for j in range(5)]
        assert stage_convergence_check(stages).passed
        stages[-1] = _stage(0.2 * 0.5**4, 0.0, sup_delta=1.0)
        assert not stage_convergence_check(stages).passed


@pytest.fixture(scope="module")
def singular_setup():
    g = group_model("euclid1")
    grid = unit_grid(g, 65)
    prm = ModelParams(lam=10.0, beta=0.2)
    return g, grid, prm, solve_singular(g, grid, prm.beta, prm.delta).u_beta


class TestRadonMeasure:
    """Sign of the pairing of beta u^-delta + L u with nonnegative bumps."""

    def test_supersolution_passes(self, singular_setup):
        """Verify u = u_beta / 2 pairs nonnegatively below the level."""
        g, grid, prm, ub = singular_setup
        report = radon_measure_check(g, grid, prm, ScalarField(grid, 0.5 * ub.values), trials=20)
        assert report.passed
        assert report.details["low_trials"] > 0
        assert report.details["high_trials"] == 0

    def test_subsolution_is_flagged(self, singular_setup):
        """Verify u = 2 u_beta pairs negatively and fails."""
        g, grid, prm, ub = singular_setup
        report = radon_measure_check(g, grid, prm, ScalarField(grid, 2.0 * ub.values), trials=20)
        assert not report.passed
        assert report.violations > 0

    def test_no_trials(self, singular_setup):
        """Verify zero trials is a vacuous pass."""
        g, grid, prm, ub = singular_setup
        report = radon_measure_check(g, grid, prm, ub, trials=0)
        assert report.passed
        assert np.isnan(report.details["worst_low_ratio"])

    def test_requires_positive_field(self, singular_setup):
        """Verify a field with a zero interior node is rejected."""
        g, grid, prm, _ = singular_setup
        with pytest.raises(InvalidArgumentError):
            radon_measure_check(g, grid, prm, ScalarField.zeros(grid))


class TestComparisons:
    """Comparison with u_beta and the level-set inclusions."""

    def test_above_u_beta(self, singular_setup):
        """Verify 2 u_beta passes and u_beta / 2 fails."""
        _, grid, _, ub = singular_setup
        assert comparison_check(ScalarField(grid, 2.0 * ub.values), ub).passed
        report = comparison_check(ScalarField(grid, 0.5 * ub.values), ub)
        assert not report.passed
        assert report.violations == grid.num_interior

    def test_level_set_inclusions(self):
        """Verify nested super-level sets pass and swapped ones fail."""
        grid = unit_grid(group_model("euclid1"), 65)
        s = np.sin(np.pi * grid.coordinates[:, 0])
        u0, u1 = ScalarField(grid, 3.0 * s), ScalarField(grid, 1.5 * s)
        good = level_set_report(grid, u0, u1)
        assert good.passed
        assert good.details["components"]["u1_above_1"] == 1
        assert good.details["measure_u1_above_1"] < good.details["measure_u0_above_1"]
        assert not level_set_report(grid, u1, u0).passed


class TestContinuationRun:
    """A short eps-continuation of the pair on a coarse interval grid."""

    @pytest.fixture(scope="class")
    def run(self):
        g = group_model("euclid1")
        grid = unit_grid(g, 33)
        prm = ModelParams(lam=60.0, beta=0.05, delta=0.5)
        ctx = build_cutoff(g, grid, prm)
        checked = []
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(
                "carnot_fbp.continuation.check_eps_threshold",
                lambda params, m1, volume: checked.append((params.epsilon, m1)) or True,
            )
            result = run_continuation(g, grid, prm, ContinuationSchedule.geometric(0.2, 1), ctx=ctx)
        return g, grid, prm, ctx, result, checked

    def test_every_stage_has_a_distinct_pair(self, run):
        """Verify E(u1) > E(u0) at both stages."""
        *_, result, _ = run
        assert [s.eps for s in result.stages] == pytest.approx([0.2, 0.1])
        for stage in result.stages:
            assert stage.E_u1 > stage.E_u0
            assert stage.E_eps_u1 > stage.E_eps_u0

    def test_final_u1_is_critical(self, run):
        """Verify u1 at the last eps passes the certificate on its truncated functional."""
        g, grid, prm, ctx, result, _ = run
        tf = build_truncated(g, grid, prm.with_eps(0.1), ctx, result.u0)
        assert critical_point_certificate(tf, result.u1).passed

    def test_warm_starts_stay_close(self, run):
        """Verify later stages record a finite change from their warm start."""
        *_, result, _ = run
        assert np.isnan(result.stages[0].sup_delta_u0)
        assert all(np.isfinite(s.sup_delta_u0) for s in result.stages[1:])

    def test_threshold_checked_at_the_first_stage(self, run):
        """Verify eps_0(lambda) is checked as soon as the first minimizer fixes m1."""
        *_, result, checked = run
        assert checked[0] == (0.2, result.u0_reports[0].m1_estimate)
