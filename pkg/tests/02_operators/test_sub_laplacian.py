import numpy as np
import pytest

from carnot_fbp.auxiliary import principal_eigenpair
from carnot_fbp.contracts import InvalidArgumentError
from carnot_fbp.geometry import ScalarField, box_mask, group_model, make_grid, unit_grid
from carnot_fbp.operators import (
    LinearSolver,
    assemble_sub_laplacian,
    h1_norm,
    h1_seminorm_sq,
    horizontal_gradient,
    inner,
    lipschitz_estimate,
    lp_norm,
    sup_norm,
)


class TestSummationByParts:
    """<A u, v> = <D u, D v>_W for arbitrary nodal vectors."""

    @pytest.mark.parametrize("name,n", [("euclid1", 33), ("euclid2", 12), ("heis1", 8)])
    def test_divergence_identity(self, name, n):
        """Verify the discrete divergence theorem on 100 random pairs."""
        g = group_model(name)
        grid = unit_grid(g, n)
        op = assemble_sub_laplacian(g, grid)
        rng = np.random.default_rng(7)
        for _ in range(100):
            u = rng.standard_normal(grid.num_nodes)
            v = rng.standard_normal(grid.num_nodes)
            lhs = inner(op.apply_full(u), v)
            rhs = op.energy_inner(u, v)
            assert abs(lhs - rhs) <= 1e-11 * max(abs(rhs), 1.0)

    def test_interior_matrix_is_symmetric_positive(self):
        """Verify the Dirichlet matrix is symmetric with a positive quadratic form."""
        g = group_model("heis1")
        grid = make_grid(g, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 7)
        op = assemble_sub_laplacian(g, grid)
        assert abs(op.matrix - op.matrix.T).max() <= 1e-12 * abs(op.matrix).max()
        x = np.random.default_rng(0).standard_normal(op.size)
        assert inner(x, op.apply(x)) > 0.0

    def test_assembly_is_cached(self):
        """Verify repeated assembly on the same grid returns the same operator."""
        g = group_model("euclid2")
        grid = unit_grid(g, 9)
        assert assemble_sub_laplacian(g, grid) is assemble_sub_laplacian(g, grid)


class TestSpectrum:
    """Classical eigenvalues on Euclidean boxes."""

    def test_unit_interval(self):
        """Verify lambda_1 = pi^2 within 0.1% at n = 512."""
        g = group_model("euclid1")
        eig = principal_eigenpair(g, unit_grid(g, 512))
        assert eig.lambda1 == pytest.approx(np.pi**2, rel=1e-3)

    def test_unit_square(self):
        """Verify lambda_1 = 2 pi^2 on the unit square."""
        g = group_model("euclid2")
        eig = principal_eigenpair(g, unit_grid(g, 65))
        assert eig.lambda1 == pytest.approx(2.0 * np.pi**2, rel=1e-2)

    def test_eigenfunction_is_positive(self):
        """Verify phi_1 is positive inside and normalized to max 1."""
        g = group_model("euclid1")
        grid = unit_grid(g, 101)
        eig = principal_eigenpair(g, grid)
        assert np.all(eig.phi1.interior > 0.0)
        assert eig.phi1.values.max() == pytest.approx(1.0)
        assert eig.phi1.vanishes_on_boundary()


class TestHeisenbergConsistency:
    """Strong-form consistency of A on heis1 away from the boundary."""

    @staticmethod
    def _error(n: int) -> float:
        g = group_model("heis1")
        grid = unit_grid(g, n)
        x1, x2, x3 = grid.coordinates.T
        u = np.sin(x1 + x3)
        # L u = -((1 + 2 x2)^2 + 4 x1^2) sin(x1 + x3)
        minus_lu = ((1.0 + 2.0 * x2) ** 2 + 4.0 * x1**2) * np.sin(x1 + x3)
        op = assemble_sub_laplacian(g, grid)
        strong = op.apply_full(u) / grid.haar_weight
        core = box_mask(grid, [0.25] * 3, [0.75 + 1e-9] * 3)
        return float(np.max(np.abs(strong[core] - minus_lu[core])))

    def test_observed_order(self):
        """Verify the consistency error decays with order >= 0.9 over three resolutions."""
        errors = [self._error(n) for n in (13, 25, 49)]
        orders = [np.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]
        assert min(orders) >= 0.9, f"errors={errors}, orders={orders}"


class TestGradient:
    """Nodal horizontal gradient and the derived norms."""

    def test_linear_fields(self):
        """Verify Z1 x3 = 2 x2 and Z2 x3 = -2 x1 exactly on linear data."""
        g = group_model("heis1")
        grid = make_grid(g, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 7)
        x1, x2, x3 = grid.coordinates.T
        grad = horizontal_gradient(g, grid, x3)
        np.testing.assert_allclose(grad.components[:, 0], 2.0 * x2, atol=1e-12)
        np.testing.assert_allclose(grad.components[:, 1], -2.0 * x1, atol=1e-12)

    def test_seminorm_of_a_hat(self):
        """Verify |u|_H1^2 = 4 for the hat function with peak 1 at 1/2 on (0,1)."""
        g = group_model("euclid1")
        grid = unit_grid(g, 101)
        u = ScalarField(grid, 1.0 - np.abs(2.0 * grid.coordinates[:, 0] - 1.0))
        assert h1_seminorm_sq(g, grid, u) == pytest.approx(4.0, rel=1e-12)
        assert h1_norm(g, grid, u) == pytest.approx(2.0, rel=1e-12)

    def test_lipschitz_uses_interior_nodes(self):
        """Verify the Lipschitz estimate of x3 on H1 is max over interior nodes of 2|(x1, x2)|."""
        g = group_model("heis1")
        grid = make_grid(g, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 7)
        u = ScalarField(grid, grid.coordinates[:, 2])
        # outermost interior ring sits at |x1| = |x2| = 2/3
        assert lipschitz_estimate(g, grid, u) == pytest.approx(np.sqrt(32.0 / 9.0), rel=1e-12)

    def test_lipschitz_of_a_plane(self):
        """Verify |grad (3x - 4y)| = 5 on the Euclidean plane."""
        g = group_model("euclid2")
        grid = unit_grid(g, 9)
        x, y = grid.coordinates.T
        assert lipschitz_estimate(g, grid, 3.0 * x - 4.0 * y) == pytest.approx(5.0, rel=1e-12)


class TestNorms:
    """Haar-weighted Lp norms and the sup norm."""

    def test_lp_of_constant(self):
        """Verify ||1||_p = vol^(1/p) on a box of volume 8."""
        g = group_model("euclid3")
        grid = make_grid(g, (0.0, 0.0, 0.0), (2.0, 2.0, 2.0), 5)
        ones = np.ones(grid.num_nodes)
        for p in (1.0, 1.5, 2.0):
            assert lp_norm(grid, ones, p) == pytest.approx(8.0 ** (1.0 / p), rel=1e-12)

    def test_l2_matches_trapezoid(self):
        """Verify ||x||_2^2 = 1/3 + h^2/6, the trapezoid value of int x^2."""
        grid = unit_grid(group_model("euclid1"), 101)
        h = grid.min_spacing
        u = ScalarField(grid, grid.coordinates[:, 0])
        assert lp_norm(grid, u, 2.0) ** 2 == pytest.approx(1.0 / 3.0 + h * h / 6.0, rel=1e-12)

    def test_lp_needs_p_at_least_one(self):
        """Verify p < 1 is rejected."""
        grid = unit_grid(group_model("euclid1"), 5)
        with pytest.raises(InvalidArgumentError, match="p >= 1"):
            lp_norm(grid, np.ones(5), 0.5)

    def test_sup_norm(self):
        """Verify sup_norm takes absolute values and is 0 on an empty vector."""
        grid = unit_grid(group_model("euclid1"), 5)
        assert sup_norm(ScalarField(grid, [0.0, 1.0, -3.0, 2.0, 0.0])) == 3.0
        assert sup_norm(np.array([])) == 0.0


class TestLinearSolver:
    """Direct and CG paths agree."""

    def test_direct_and_cg_agree(self):
        """Verify Jacobi-preconditioned CG reproduces the factorized solve."""
        g = group_model("euclid2")
        grid = unit_grid(g, 21)
        op = assemble_sub_laplacian(g, grid)
        rhs = op.interior_weight * np.random.default_rng(3).uniform(0.0, 1.0, op.size)
        direct = LinearSolver(op.matrix, method="direct").solve(rhs)
        cg = LinearSolver(op.matrix, method="cg", rtol=1e-12).solve(rhs)
        np.testing.assert_allclose(cg, direct, rtol=1e-8, atol=1e-12)

    def test_zero_rhs_short_circuits(self):
        """Verify a zero right-hand side returns zeros without a solve."""
        g = group_model("euclid1")
        op = assemble_sub_laplacian(g, unit_grid(g, 9))
        assert not np.any(op.solve(np.zeros(op.size)))

    def test_unknown_method(self):
        """Verify an unknown method name is rejected."""
        g = group_model("euclid1")
        op = assemble_sub_laplacian(g, unit_grid(g, 9))
        with pytest.raises(ValueError):
            LinearSolver(op.matrix, method="lu")

    def test_triplet_dump(self, tmp_path):
        """Verify dump_triplets writes one line per stored entry."""
        g = group_model("euclid1")
        op = assemble_sub_laplacian(g, unit_grid(g, 9))
        target = tmp_path / "A.txt"
        op.dump_triplets(target)
        lines = target.read_text().splitlines()
        assert len(lines) == op.matrix.nnz
        row, col, value = lines[0].split()
        assert (int(row), int(col)) == (0, 0)
        assert float(value) == pytest.approx(op.matrix[0, 0])
