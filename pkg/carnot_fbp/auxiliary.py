"""Principal eigenpair, singular auxiliary solution u_beta, beta* estimate and the barrier v0."""

import logging
from dataclasses import dataclass

import numpy as np

from .contracts import InvalidArgumentError, IterationLimitError, PositivityViolationError, require
from .geometry import Grid, GroupModel, ScalarField, values_of
from .model import CutoffContext, ModelParams, g_eval
from .operators import assemble_sub_laplacian, inner

logger = logging.getLogger(__name__)

FLOOR_START = 1e-2
FLOOR_MIN = 1e-12
BETA_CAP = 1e6


@dataclass(frozen=True, eq=False)
class Eigenpair:
    lambda1: float
    phi1: ScalarField
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class SingularSolution:
    u_beta: ScalarField
    residual_norm: float
    beta: float
    delta: float
    iterations: int = 0


def principal_eigenpair(g: GroupModel, grid: Grid, tol: float = 1e-8, max_iter: int = 500) -> Eigenpair:
    """Inverse power iteration for A phi = lambda W phi on the interior nodes."""
    op = assemble_sub_laplacian(g, grid)
    w = op.interior_weight
    x = np.ones(op.size)
    lam = np.inf
    residual = np.inf
    for it in range(1, max_iter + 1):
        y = op.solve(w * x, x0=x / max(lam, 1.0) if np.isfinite(lam) else None)
        ay = op.apply(y)
        lam = inner(y, ay) / inner(y, w * y)
        x = y / np.max(np.abs(y))
        residual = float(np.linalg.norm(op.apply(x) - lam * w * x))
        logger.debug(f"inverse iteration {it}: lambda={lam:.12g} residual={residual:.3e}")
        if residual <= tol * lam * np.linalg.norm(w * x):
            break
    else:
        raise IterationLimitError(
            f"Inverse iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
            last_iterate=ScalarField.from_interior(grid, x),
        )
    if np.sum(x) < 0.0:
        x = -x
    x = x / np.max(x)
    if np.any(x <= 0.0):
        logger.warning(f"Principal eigenfunction has {int(np.sum(x <= 0))} nonpositive interior nodes")
    logger.info(f"lambda_1 = {lam:.10g} after {it} iterations on {g.name} {grid.resolution}")
    return Eigenpair(float(lam), ScalarField.from_interior(grid, x), it, residual)


def solve_singular(
    g: GroupModel,
    grid: Grid,
    beta_param: float,
    delta: float,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> SingularSolution:
    """
    Monotone iteration u <- A^-1 (W beta max(u, floor_k)^-delta) with the
    floor halving every step until FLOOR_MIN.
    """
    require(beta_param > 0.0, f"beta must be positive, got {beta_param}")
    require(0.0 < delta < 1.0, f"delta={delta} outside the admissible range 0<δ<1")
    op = assemble_sub_laplacian(g, grid)
    w = op.interior_weight
    u = np.zeros(op.size)
    diff = np.inf
    for k in range(max_iter):
        floor = max(FLOOR_START * 0.5**k, FLOOR_MIN)
        rhs = w * beta_param * np.maximum(u, floor) ** (-delta)
        u_new = op.solve(rhs, x0=u if k else None)
        if np.any(u_new <= 0.0):
            raise PositivityViolationError(
                f"u_beta lost positivity at {int(np.sum(u_new <= 0))} nodes (iteration {k})",
                last_iterate=ScalarField.from_interior(grid, u_new),
            )
        diff = float(np.max(np.abs(u_new - u)))
        u = u_new
        floor_inactive = floor <= FLOOR_MIN or float(np.min(u)) > floor
        if diff <= tol * max(1.0, float(np.max(u))) and floor_inactive:
            break
    else:
        raise IterationLimitError(
            f"Singular iteration stalled at sup-difference {diff:.3e}",
            last_iterate=ScalarField.from_interior(grid, u),
        )
    forcing = w * beta_param * u ** (-delta)
    residual = float(np.max(np.abs(op.apply(u) - forcing)) / np.max(np.abs(forcing)))
    logger.info(f"u_beta: beta={beta_param}, delta={delta}, sup={np.max(u):.6g}, {k + 1} iterations")
    return SingularSolution(ScalarField.from_interior(grid, u), residual, beta_param, delta, k + 1)


def build_cutoff(g: GroupModel, grid: Grid, params: ModelParams) -> CutoffContext:
    """Cutoff context for params; with beta = 0 the cutoff never enters and a unit field stands in."""
    if params.beta == 0.0:
        return CutoffContext(ScalarField.from_interior(grid, np.ones(grid.num_interior)), params.delta)
    sol = solve_singular(g, grid, params.beta, params.delta)
    return CutoffContext(sol.u_beta, params.delta)


def _admissible(beta: float, t: np.ndarray, lam_g: np.ndarray, lambda1: float, delta: float) -> bool:
    return bool(np.any(beta * t ** (-delta) + lam_g <= lambda1 * t))


def beta_star_estimate(params: ModelParams, eig: Eigenpair, iterations: int = 60, points: int = 2000) -> float:
    """
    Supremum of admissible beta, where beta is admissible if some t on a log
    grid in [1e-6, 1e6] has beta t^-delta + lam g_min((t-1)+) <= lambda_1 t.
    """
    if eig.lambda1 <= 0.0:
        raise InvalidArgumentError(f"lambda_1 must be positive, got {eig.lambda1}")
    t = np.logspace(-6.0, 6.0, points)
    lam_g = params.lam * g_eval(params, np.maximum(t - 1.0, 0.0))
    if _admissible(BETA_CAP, t, lam_g, eig.lambda1, params.delta):
        return float("inf")
    lo, hi = 0.0, BETA_CAP
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _admissible(mid, t, lam_g, eig.lambda1, params.delta):
            lo = mid
        else:
            hi = mid
    return lo


def growth_bound(params: ModelParams, sup_u: float) -> float:
    """A0 = a0 + a1 sup^(p-1), the bound on g_eps over the range of the iterate."""
    return params.a0 + params.a1 * max(sup_u, 0.0) ** (params.p - 1.0)


def barrier_v0(g: GroupModel, grid: Grid, params: ModelParams, u_beta, A0: float) -> ScalarField:
    """Solve A v0 = W (lam A0 + beta u_beta^-delta)."""
    op = assemble_sub_laplacian(g, grid)
    ub = values_of(u_beta)[grid.interior_index]
    require(bool(np.all(ub > 0.0)), "u_beta must be positive at interior nodes")
    rhs = op.interior_weight * (params.lam * A0 + params.beta * ub ** (-params.delta))
    return ScalarField.from_interior(grid, op.solve(rhs))
