"""
Discrete horizontal gradient and sub-Laplacian.

The sub-Laplacian is assembled as A = D^T W D where D stacks the discrete
generators. Generator Z_i is evaluated on the grid edges along its anchor
axis a: the derivative along a is the plain edge difference, the transverse
derivatives are nodal centered differences averaged onto the edge, and the
frame coefficients are frozen at the edge midpoint. W holds the quadrature
weight of each edge. Because A is built from D, <A u, v> = <D u, D v>_W holds
to rounding, which is the discrete divergence theorem.
"""

import logging
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .contracts import InvalidArgumentError, IterationLimitError
from .geometry import Grid, GroupModel, frame_at, values_of

logger = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 50_000


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Deterministic (pairwise) dot product."""
    return float(np.sum(a * b))


def _difference_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def _average_1d(n: int) -> sp.csr_matrix:
    return sp.diags([np.full(n - 1, 0.5), np.full(n - 1, 0.5)], [0, 1], shape=(n - 1, n), format="csr")


def _gradient_1d(n: int, h: float) -> sp.csr_matrix:
    """Matrix form of numpy.gradient with edge_order=1."""
    g = sp.lil_matrix((n, n))
    g[0, 0], g[0, 1] = -1.0 / h, 1.0 / h
    g[n - 1, n - 2], g[n - 1, n - 1] = -1.0 / h, 1.0 / h
    for i in range(1, n - 1):
        g[i, i - 1], g[i, i + 1] = -0.5 / h, 0.5 / h
    return g.tocsr()


def _kron_axis(grid: Grid, axis: int, factor: sp.spmatrix) -> sp.csr_matrix:
    """Apply a 1-D operator along one axis of the row-major node ordering."""
    out = None
    for k, n in enumerate(grid.resolution):
        block = factor if k == axis else sp.identity(n, format="csr")
        out = block if out is None else sp.kron(out, block, format="csr")
    return sp.csr_matrix(out)


def _edge_points(grid: Grid, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """Midpoints and quadrature weights of the edges along one axis."""
    axes = list(grid.axes)
    weights = list(grid.axis_weights)
    h = grid.spacing[axis]
    axes[axis] = axes[axis][:-1] + 0.5 * h
    weights[axis] = np.full(grid.resolution[axis] - 1, h)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    w = weights[0]
    for wk in weights[1:]:
        w = np.multiply.outer(w, wk)
    return points, np.asarray(w).ravel()


@dataclass(frozen=True, eq=False)
class HorizontalField:
    """Per-node values of (Z_1 u, ..., Z_N1 u)."""

    grid: Grid
    components: np.ndarray

    @property
    def num_components(self) -> int:
        return self.components.shape[1]

    def magnitude_sq(self) -> np.ndarray:
        return np.sum(self.components**2, axis=1)


class LinearSolver:
    """
    SPD solves with the interior sub-Laplacian. Moderate systems use a cached
    sparse factorization; large ones use Jacobi-preconditioned CG.
    """

    def __init__(self, matrix: sp.csr_matrix, method: str = "auto", rtol: float = 1e-10, maxiter: Optional[int] = None):
        if method not in ("auto", "direct", "cg"):
            raise InvalidArgumentError(f"Unknown linear solver method '{method}'")
        self.matrix = matrix
        self.rtol = rtol
        self.maxiter = maxiter or 20 * matrix.shape[0]
        if method == "auto":
            method = "direct" if matrix.shape[0] <= DIRECT_SOLVE_LIMIT else "cg"
        self.method = method
        self._factor: Optional[Callable[[np.ndarray], np.ndarray]] = None
        self._lock = threading.Lock()
        inv_diag = 1.0 / matrix.diagonal()
        self._jacobi = spla.LinearOperator(matrix.shape, matvec=lambda x: inv_diag * x)

    def _factorized(self) -> Callable[[np.ndarray], np.ndarray]:
        with self._lock:
            if self._factor is None:
                logger.debug(f"Factorizing {self.matrix.shape[0]}x{self.matrix.shape[0]} sub-Laplacian")
                self._factor = spla.factorized(sp.csc_matrix(self.matrix))
            return self._factor

    def solve(self, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.method == "direct":
            factor = self._factorized()
            with self._lock:
                return np.asarray(factor(rhs))
        x, info = spla.cg(self.matrix, rhs, x0=x0, rtol=self.rtol, atol=0.0, maxiter=self.maxiter, M=self._jacobi)
        if info > 0:
            raise IterationLimitError(f"CG did not reach rtol={self.rtol} in {info} iterations", last_iterate=x)
        return x


class DiscreteOperator:
    """
    -L_h on the interior nodes of a grid, together with the flux operator D it
    was built from.
    """

    def __init__(self, group: GroupModel, grid: Grid, flux: sp.csr_matrix, flux_weight: np.ndarray):
        self.group = group
        self.grid = grid
        self.flux = flux
        self.flux_weight = flux_weight
        scaled = sp.diags(np.sqrt(flux_weight)) @ flux
        full = (scaled.T @ scaled).tocsr()
        self.full_matrix = ((full + full.T) * 0.5).tocsr()
        idx = grid.interior_index
        self.matrix = self.full_matrix[idx][:, idx].tocsr()
        self.interior_weight = grid.haar_weight[idx]
        self._solvers: Dict[str, LinearSolver] = {}

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, interior: np.ndarray) -> np.ndarray:
        return self.matrix @ interior

    def apply_full(self, values: np.ndarray) -> np.ndarray:
        """A acting on a full nodal vector (boundary values included)."""
        return self.full_matrix @ values

    def solver(self, method: str = "auto", rtol: float = 1e-10) -> LinearSolver:
        key = f"{method}:{rtol}"
        if key not in self._solvers:
            self._solvers[key] = LinearSolver(self.matrix, method=method, rtol=rtol)
        return self._solvers[key]

    def solve(self, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        return self.solver().solve(rhs, x0=x0)

    def flux_gradient(self, u) -> np.ndarray:
        return self.flux @ values_of(u)

    def energy_inner(self, u, v) -> float:
        """<D u, D v>_W."""
        return inner(self.flux_weight * self.flux_gradient(u), self.flux_gradient(v))

    def dump_triplets(self, path) -> None:
        from .interop import write_triplets

        write_triplets(path, self.matrix)


def _assemble_flux(g: GroupModel, grid: Grid) -> Tuple[sp.csr_matrix, np.ndarray]:
    if grid.ndim != g.ambient_dim:
        raise InvalidArgumentError(f"Grid dimension {grid.ndim} does not match {g.name}")
    nodal = [_kron_axis(grid, k, _gradient_1d(grid.resolution[k], grid.spacing[k])) for k in range(grid.ndim)]
    blocks, weights = [], []
    for i, a in enumerate(g.anchor_axes):
        points, w = _edge_points(grid, a)
        coeff = frame_at(g, points)[:, i, :]
        edge_diff = _kron_axis(grid, a, _difference_1d(grid.resolution[a], grid.spacing[a]))
        block = sp.diags(coeff[:, a]) @ edge_diff
        averaging = None
        for k in range(grid.ndim):
            if k == a or not np.any(coeff[:, k]):
                continue
            if averaging is None:
                averaging = _kron_axis(grid, a, _average_1d(grid.resolution[a]))
            block = block + sp.diags(coeff[:, k]) @ (averaging @ nodal[k])
        blocks.append(sp.csr_matrix(block))
        weights.append(w)
    return sp.vstack(blocks, format="csr"), np.concatenate(weights)


@lru_cache(maxsize=16)
def assemble_sub_laplacian(g: GroupModel, grid: Grid) -> DiscreteOperator:
    flux, weight = _assemble_flux(g, grid)
    op = DiscreteOperator(g, grid, flux, weight)
    logger.debug(f"Assembled {g.name} sub-Laplacian: {op.size} unknowns, nnz={op.matrix.nnz}")
    return op


def nodal_partials(grid: Grid, u) -> np.ndarray:
    """(num_nodes, ndim) centered differences, one-sided on the boundary layer."""
    values = grid.reshape(values_of(u))
    if grid.ndim == 1:
        return np.gradient(values, grid.spacing[0], edge_order=1)[:, None]
    partials = np.gradient(values, *grid.spacing, edge_order=1)
    return np.stack([np.asarray(d).ravel() for d in partials], axis=-1)


def horizontal_gradient(g: GroupModel, grid: Grid, u) -> HorizontalField:
    """Nodal Z_i u from the frame applied to nodal_partials."""
    partials = nodal_partials(grid, u)
    frame = frame_at(g, grid.coordinates)
    return HorizontalField(grid, np.einsum("nik,nk->ni", frame, partials))


def h1_seminorm_sq(g: GroupModel, grid: Grid, u) -> float:
    return assemble_sub_laplacian(g, grid).energy_inner(u, u)


def h1_norm(g: GroupModel, grid: Grid, u) -> float:
    return float(np.sqrt(max(h1_seminorm_sq(g, grid, u), 0.0)))


def lp_norm(grid: Grid, u, p: float) -> float:
    if p < 1:
        raise InvalidArgumentError(f"lp_norm needs p >= 1, got {p}")
    return float(np.sum(grid.haar_weight * np.abs(values_of(u)) ** p) ** (1.0 / p))


def sup_norm(u) -> float:
    values = values_of(u)
    return float(np.max(np.abs(values))) if values.size else 0.0


def lipschitz_estimate(g: GroupModel, grid: Grid, u) -> float:
    grad = horizontal_gradient(g, grid, u)
    return float(np.sqrt(np.max(grad.magnitude_sq()[grid.interior_mask])))
