"""
Minimizer u0 of E_eps and the mountain-pass critical point u1 of the
functional truncated at u0.

All iterations run on interior value vectors. The Sobolev gradient A^-1 grad
is the search direction throughout, so step lengths are O(1) independently of
the grid spacing.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from .auxiliary import barrier_v0, growth_bound
from .contracts import (
    GeometryFailureError,
    InvalidArgumentError,
    IterationLimitError,
    NoSolutionError,
    StagnationError,
    require,
)
from .geometry import Grid, GroupModel, ScalarField, haar_measure_of, smooth_bump, values_of
from .interfaces import IScheduler
from .model import (
    CutoffContext,
    EpsEnergy,
    G_eps,
    ModelParams,
    _phi,
    _phi_prime,
    _Phi,
    energy_exact,
    eps_threshold,
    eval_B,
    eval_mollifier,
    g_eps,
    g_eps_derivative,
    mollifier_derivative,
)
from .operators import DIRECT_SOLVE_LIMIT, inner
from .orchestrator.executor import run_all
from .structures import CheckReport, Path, SolveReport

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
WOLFE_SIGMA = 0.9
MIN_STEP = 1e-12
DEFAULT_TOL_FACTOR = 1e-7
TIE_TOL = 1e-10
MIN_PATH_POINTS = 16
RIM_DIRECTIONS = 64
CERTIFICATE_DIRECTIONS = 50


# ---------------------------------------------------------------------------
# Truncated functional
# ---------------------------------------------------------------------------


class TruncatedFunctional(EpsEnergy):
    """
    E_eps with the free-boundary and g terms frozen above the cap:
    B_eps(x, s) and G~_eps(x, s) continue linearly past cap(x) with the slope
    they have there. The singular cutoff term is not truncated.
    """

    def __init__(self, group: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext, cap: Optional[ScalarField]):
        super().__init__(group, grid, params, ctx)
        self.cap = np.full(self.op.size, np.inf) if cap is None else values_of(cap)[grid.interior_index].copy()
        self._cap_finite = np.where(np.isfinite(self.cap), self.cap, 0.0)

    def _split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        below = np.minimum(x, self.cap)
        excess = np.where(np.isfinite(self.cap), np.maximum(x - self._cap_finite, 0.0), 0.0)
        return below, excess

    def B_tilde(self, x: np.ndarray) -> np.ndarray:
        eps = self.params.epsilon
        below, excess = self._split(x)
        slope = eval_mollifier((self._cap_finite - 1.0) / eps) / eps
        return eval_B((below - 1.0) / eps) + excess * slope

    def g_tilde(self, x: np.ndarray) -> np.ndarray:
        below, _ = self._split(x)
        return g_eps(self.params, np.maximum(below - 1.0, 0.0))

    def G_tilde(self, x: np.ndarray) -> np.ndarray:
        below, excess = self._split(x)
        at_cap = g_eps(self.params, np.maximum(self._cap_finite - 1.0, 0.0))
        return G_eps(self.params, np.maximum(below - 1.0, 0.0)) + excess * at_cap

    def bulk(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        return self.B_tilde(x) - prm.lam * self.G_tilde(x) - prm.beta * _Phi(self.ub, x, prm.delta)

    def bulk_prime(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        below, _ = self._split(x)
        return (
            eval_mollifier((below - 1.0) / prm.epsilon) / prm.epsilon
            - prm.lam * self.g_tilde(x)
            - prm.beta * _phi(self.ub, x, prm.delta)
        )

    def bulk_second(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        active = x < self.cap
        s = np.maximum(x - 1.0, 0.0)
        smooth = mollifier_derivative((x - 1.0) / prm.epsilon) / prm.epsilon**2
        smooth = smooth - prm.lam * np.where(x > 1.0, g_eps_derivative(prm, s), 0.0)
        return np.where(active, smooth, 0.0) - prm.beta * _phi_prime(self.ub, x, prm.delta)


def build_truncated(
    g: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext, cap: Optional[ScalarField]
) -> TruncatedFunctional:
    """Truncation of E_eps at cap; cap=None is the +inf sentinel (no truncation)."""
    return TruncatedFunctional(g, grid, params, ctx, cap)


# ---------------------------------------------------------------------------
# Local solvers
# ---------------------------------------------------------------------------


def default_tolerance(functional: EpsEnergy) -> float:
    return DEFAULT_TOL_FACTOR * functional.residual_scale()


def _h1(functional: EpsEnergy, x: np.ndarray) -> float:
    return float(np.sqrt(max(inner(x, functional.op.apply(x)), 0.0)))


def _newton_direction(functional: EpsEnergy, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    hess = functional.hessian(x)
    if hess.shape[0] <= DIRECT_SOLVE_LIMIT:
        step = spla.spsolve(hess.tocsc(), -grad)
    else:
        step, info = spla.minres(hess, -grad, rtol=1e-10, maxiter=10 * hess.shape[0])
        if info != 0:
            logger.debug(f"MINRES returned info={info}")
    step = np.asarray(step, dtype=float)
    if not np.all(np.isfinite(step)):
        logger.debug("Singular Hessian, falling back to the Sobolev gradient")
        step = -functional.op.solve(grad)
    return step


def _merit(functional: EpsEnergy, x: np.ndarray) -> float:
    r = functional.strong_residual(x)
    return float(np.sqrt(inner(functional.weight, r * r)))


def newton_polish(
    functional: EpsEnergy,
    x0: np.ndarray,
    tol: Optional[float] = None,
    max_iter: int = 50,
    mode: str = "critical",
) -> Tuple[np.ndarray, int]:
    """
    Damped Newton iteration on the gradient of `functional`.

    mode="minimize" backtracks on the energy (Armijo) and replaces ascent
    directions by the Sobolev gradient; mode="critical" backtracks on the
    weighted residual norm so saddle points are reachable.
    """
    if mode not in ("critical", "minimize"):
        raise InvalidArgumentError(f"Unknown polish mode '{mode}'")
    tol = default_tolerance(functional) if tol is None else tol
    x = np.array(x0, dtype=float)
    for it in range(max_iter + 1):
        grad = functional.gradient(x)
        res = functional.residual_sup(x)
        if res <= tol:
            return x, it
        if it == max_iter:
            break
        step = _newton_direction(functional, x, grad)
        t = 1.0
        if mode == "minimize":
            slope = inner(grad, step)
            if slope >= 0.0:
                step = -functional.op.solve(grad)
                slope = inner(grad, step)
            f = functional.energy(x)
            while t >= MIN_STEP and functional.energy(x + t * step) > f + ARMIJO_C1 * t * slope:
                t *= 0.5
        else:
            m = _merit(functional, x)
            while t >= MIN_STEP and _merit(functional, x + t * step) > (1.0 - ARMIJO_C1 * t) * m:
                t *= 0.5
        if t < MIN_STEP:
            raise StagnationError(
                f"Newton {mode} line search failed at residual {res:.3e}",
                last_iterate=functional.field(x),
            )
        x = x + t * step
        logger.debug(f"newton[{mode}] {it}: residual={res:.3e} step={t:.3g}")
    raise IterationLimitError(
        f"Newton {mode} polish stopped at residual {functional.residual_sup(x):.3e} > {tol:.3e}",
        last_iterate=functional.field(x),
    )


def _line_search(
    functional: EpsEnergy, x: np.ndarray, f: float, grad: np.ndarray, d: np.ndarray, alpha: float
) -> Optional[Tuple[float, np.ndarray, float, np.ndarray]]:
    """Armijo backtracking with the approximate-Wolfe test as fallback near round-off."""
    slope = inner(grad, d)
    tiny = 1e-10 * abs(f) + 1e-14
    while alpha >= MIN_STEP:
        x_new = x + alpha * d
        f_new = functional.energy(x_new)
        if f_new <= f + ARMIJO_C1 * alpha * slope:
            return alpha, x_new, f_new, functional.gradient(x_new)
        if f_new <= f + tiny:
            grad_new = functional.gradient(x_new)
            slope_new = inner(grad_new, d)
            if WOLFE_SIGMA * slope <= slope_new <= (2.0 * ARMIJO_C1 - 1.0) * slope:
                return alpha, x_new, f_new, grad_new
        alpha *= 0.5
    return None


def check_eps_threshold(params: ModelParams, m1: float, volume: float) -> bool:
    """Warn and return False when eps is not below eps_0(lambda) for this m1."""
    if not np.isfinite(m1):
        return True
    threshold = eps_threshold(params, m1, volume)
    if params.epsilon >= threshold:
        logger.warning(f"eps={params.epsilon:g} is not below eps_0(lambda)={threshold:.4g}")
        return False
    return True


def minimize_energy(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    ctx: CutoffContext,
    u_init=None,
    *,
    tol: Optional[float] = None,
    max_iter: int = 2000,
    functional: Optional[EpsEnergy] = None,
    m1: Optional[float] = None,
    polish: bool = True,
) -> Tuple[ScalarField, SolveReport]:
    """
    Preconditioned nonlinear conjugate gradients (Polak-Ribiere+) with Armijo
    backtracking, finished by a Newton polish when NCG stops short of tol.
    """
    functional = functional or EpsEnergy(g, grid, params, ctx)
    if m1 is not None:
        check_eps_threshold(params, m1, grid.volume)
    tol = default_tolerance(functional) if tol is None else tol
    x = np.zeros(functional.op.size) if u_init is None else values_of(u_init)[grid.interior_index].copy()
    report = SolveReport(method="minimize", epsilon=params.epsilon)

    f = functional.energy(x)
    grad = functional.gradient(x)
    z = functional.op.solve(grad)
    d = -z
    alpha = 1.0
    report.history.append(f)
    it = 0
    res = functional.residual_sup(x)
    while res > tol and it < max_iter:
        if inner(grad, d) >= 0.0:
            d = -z
        found = _line_search(functional, x, f, grad, d, min(1.0, 4.0 * alpha))
        if found is None:
            if polish:
                logger.debug(f"NCG line search exhausted at residual {res:.3e}; switching to Newton")
                break
            report.residual_sup, report.iterations = res, it
            raise StagnationError(
                f"Line search failed at iteration {it} (residual {res:.3e})",
                report=report,
                last_iterate=functional.field(x),
            )
        alpha, x_new, f_new, grad_new = found
        z_new = functional.op.solve(grad_new)
        beta_pr = max(0.0, inner(grad_new, z_new - z) / max(inner(grad, z), 1e-300))
        d = -z_new + beta_pr * d
        x, f, grad, z = x_new, f_new, grad_new, z_new
        it += 1
        res = functional.residual_sup(x)
        report.history.append(f)
        logger.debug(f"ncg {it}: E={f:.12g} residual={res:.3e} alpha={alpha:.3g}")

    polished = 0
    if res > tol:
        if not polish:
            report.residual_sup, report.iterations = res, it
            raise IterationLimitError(
                f"NCG reached {max_iter} iterations at residual {res:.3e}",
                report=report,
                last_iterate=functional.field(x),
            )
        try:
            x, polished = newton_polish(functional, x, tol, mode="minimize")
        except (IterationLimitError, StagnationError) as exc:
            report.residual_sup, report.iterations = functional.residual_sup(x), it
            exc.report = report
            raise
        f = functional.energy(x)
        report.history.append(f)

    u = functional.field(x)
    report.energy_eps = f
    report.energy_exact = energy_exact(g, grid, params, u)
    report.residual_sup = functional.residual_sup(x)
    report.iterations = it + polished
    report.converged = True
    logger.info(
        f"minimize: E_eps={f:.10g} E={report.energy_exact:.10g} residual={report.residual_sup:.2e} "
        f"({it} NCG + {polished} Newton)"
    )
    return u, report


# ---------------------------------------------------------------------------
# Multi-start minimization
# ---------------------------------------------------------------------------


def _starts(g: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext, restarts: int, seed: int) -> List[np.ndarray]:
    v0 = barrier_v0(g, grid, params, ctx.u_beta, growth_bound(params, 2.0)).interior
    scale = max(float(np.max(v0)), 1.0) if v0.size else 1.0
    starts = [np.zeros(grid.num_interior)] + [t * v0 for t in (0.5, 1.0, 2.0)]
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(grid.box_lo), np.asarray(grid.box_hi)
    side = float(np.min(hi - lo))
    while len(starts) < restarts:
        center = lo + (hi - lo) * rng.uniform(0.25, 0.75, size=grid.ndim)
        radius = side * rng.uniform(0.2, 0.5)
        amplitude = rng.uniform(1.5, 4.0) * scale
        starts.append(amplitude * smooth_bump(grid, center, radius)[grid.interior_index])
    return starts


@dataclass
class MultiStartResult:
    field: ScalarField
    report: SolveReport
    energies: List[float]


def multi_start_minimize(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    ctx: CutoffContext,
    restarts: int = 8,
    seed: int = 0,
    scheduler: Optional[IScheduler] = None,
    tol: Optional[float] = None,
    max_iter: int = 2000,
) -> MultiStartResult:
    """Minimize from every start; keep the lowest exact energy (ties go to the smaller H1 norm)."""
    require(restarts >= 8, f"restarts must be at least 8, got {restarts}")
    starts = _starts(g, grid, params, ctx, restarts, seed)
    functional = EpsEnergy(g, grid, params, ctx)

    def run(x0: np.ndarray):
        try:
            start = ScalarField.from_interior(grid, x0)
            return minimize_energy(g, grid, params, ctx, start, tol=tol, max_iter=max_iter, functional=functional)
        except (IterationLimitError, StagnationError) as exc:
            logger.warning(f"Discarding a start: {exc}")
            return None

    outcomes = run_all(run, starts, scheduler)
    best = None
    energies = []
    for outcome in outcomes:
        if outcome is None:
            continue
        u, report = outcome
        energies.append(report.energy_exact)
        if best is None:
            best = (u, report)
            continue
        delta = report.energy_exact - best[1].energy_exact
        if delta < -TIE_TOL or (
            abs(delta) <= TIE_TOL and _h1(functional, u.interior) < _h1(functional, best[0].interior)
        ):
            best = (u, report)
    if best is None:
        raise NoSolutionError(f"All {len(starts)} minimization starts failed")
    best[1].m1_estimate = best[1].energy_exact
    logger.info(f"multi-start: {len(energies)}/{len(starts)} converged, best E={best[1].energy_exact:.10g}")
    return MultiStartResult(best[0], best[1], energies)


def estimate_m1(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    ctx: CutoffContext,
    restarts: int = 8,
    seed: int = 0,
    scheduler: Optional[IScheduler] = None,
) -> float:
    """Upper estimate of inf E: exact energy of the best eps-minimizer."""
    return multi_start_minimize(g, grid, params, ctx, restarts, seed, scheduler).report.energy_exact


def locate_lambda_star(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    ctx: CutoffContext,
    lam_lo: float,
    lam_hi: float,
    rel_tol: float = 1e-2,
    restarts: int = 8,
    seed: int = 0,
    scheduler: Optional[IScheduler] = None,
    estimator: Optional[Callable[[float], float]] = None,
) -> Tuple[float, float]:
    """
    Bisection bracket (lo, hi) for the first lambda with m1(lambda) < -H(Omega).
    The predicate must fail at lam_lo and hold at lam_hi.
    """
    require(0.0 <= lam_lo < lam_hi, f"Need 0 <= lam_lo < lam_hi, got [{lam_lo}, {lam_hi}]")
    level = -grid.volume
    estimator = estimator or (
        lambda lam: estimate_m1(g, grid, params.with_lambda(lam), ctx, restarts, seed, scheduler)
    )
    if estimator(lam_hi) >= level:
        raise NoSolutionError(f"m1({lam_hi:g}) does not cross -H(Omega)={level:g}; raise the upper bound")
    if estimator(lam_lo) < level:
        raise NoSolutionError(f"m1({lam_lo:g}) is already below -H(Omega); lower the bracket")
    lo, hi = lam_lo, lam_hi
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if estimator(mid) < level:
            hi = mid
        else:
            lo = mid
        logger.info(f"lambda* bracket [{lo:.6g}, {hi:.6g}]")
    return lo, hi


# ---------------------------------------------------------------------------
# Mountain pass
# ---------------------------------------------------------------------------


def rim_estimate(
    tf: EpsEnergy,
    radius: float,
    directions: int = RIM_DIRECTIONS,
    seed: int = 0,
    scheduler: Optional[IScheduler] = None,
) -> float:
    """m2 ~ min of the functional over random directions scaled to H1 norm `radius`."""
    require(radius > 0.0, f"Rim radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    samples = [rng.standard_normal(tf.op.size) for _ in range(directions)]

    def energy_on_rim(v: np.ndarray) -> float:
        return tf.energy(radius * v / _h1(tf, v))

    return float(min(run_all(energy_on_rim, samples, scheduler)))


def _a_inner(tf: EpsEnergy, a: np.ndarray, b: np.ndarray) -> float:
    return inner(a, tf.op.apply(b))


def _redistribute(tf: EpsEnergy, points: List[np.ndarray], energies: np.ndarray, kappa: float = 2.0) -> List[np.ndarray]:
    """
    Equidistribute points by H1 arc length weighted with 1 + kappa * normalized
    energy, so nodes gather near the peak. The segment endpoints stay put.
    """
    m = len(points)
    if m <= 2:
        return points
    energies = np.asarray(energies, dtype=float)
    span = float(np.ptp(energies))
    if span > 0.0:
        omega = 1.0 + kappa * (energies - np.min(energies)) / span
    else:
        # flat segment: plain arc length
        omega = np.ones_like(energies)
    lengths = np.array(
        [np.sqrt(max(_a_inner(tf, b - a, b - a), 0.0)) for a, b in zip(points[:-1], points[1:])]
    )
    s = np.concatenate([[0.0], np.cumsum(lengths * 0.5 * (omega[:-1] + omega[1:]))])
    if s[-1] <= 0.0:
        return points
    targets = np.linspace(0.0, s[-1], m)
    out = [points[0]]
    for t in targets[1:-1]:
        j = int(np.clip(np.searchsorted(s, t) - 1, 0, m - 2))
        theta = (t - s[j]) / (s[j + 1] - s[j]) if s[j + 1] > s[j] else 0.0
        out.append((1.0 - theta) * points[j] + theta * points[j + 1])
    out.append(points[-1])
    return out


def _reparametrize(tf: EpsEnergy, path: Path) -> Path:
    k = path.peak
    left = _redistribute(tf, path.points[: k + 1], path.energies[: k + 1])
    right = _redistribute(tf, path.points[k:], path.energies[k:])
    points = left + right[1:]
    return Path(points, np.array([tf.energy(p) for p in points]))


def straight_path(tf: EpsEnergy, endpoint: np.ndarray, P: int) -> Path:
    points = [t * endpoint for t in np.linspace(0.0, 1.0, P)]
    return Path(points, np.array([tf.energy(p) for p in points]))


def _tangent(path: Path, k: int) -> np.ndarray:
    return path.points[k + 1] - path.points[k - 1]


def _deform(tf: EpsEnergy, path: Path, step: float, scheduler: Optional[IScheduler]) -> Path:
    """One string step: climbing image at the peak, perpendicular descent elsewhere."""
    k = path.peak

    def move(j: int) -> np.ndarray:
        x = path.points[j]
        z = tf.op.solve(tf.gradient(x))
        tau = _tangent(path, j)
        norm_sq = _a_inner(tf, tau, tau)
        along = _a_inner(tf, z, tau) / norm_sq if norm_sq > 0.0 else 0.0
        if j == k:
            return x - step * (z - 2.0 * along * tau)
        return x - step * (z - along * tau)

    moved = run_all(move, range(1, path.size - 1), scheduler)
    points = [path.points[0]] + moved + [path.points[-1]]
    return Path(points, np.array([tf.energy(p) for p in points]))


def _bent_path(tf: EpsEnergy, endpoint: np.ndarray, P: int, rng: np.random.Generator) -> Path:
    """Initial path t*u0 + sin(pi t) * eta with a random positive bump eta."""
    grid = tf.grid
    lo, hi = np.asarray(grid.box_lo), np.asarray(grid.box_hi)
    center = lo + (hi - lo) * rng.uniform(0.3, 0.7, size=grid.ndim)
    eta = smooth_bump(grid, center, 0.3 * float(np.min(hi - lo)))[grid.interior_index]
    eta *= 0.5 * float(np.max(endpoint))
    points = [t * endpoint + np.sin(np.pi * t) * eta for t in np.linspace(0.0, 1.0, P)]
    points[-1] = endpoint.copy()
    return Path(points, np.array([tf.energy(p) for p in points]))


def mountain_pass(
    tf: TruncatedFunctional,
    endpoint: ScalarField,
    P: int = MIN_PATH_POINTS,
    *,
    tol: Optional[float] = None,
    max_iter: int = 3000,
    step: float = 0.5,
    retries: int = 2,
    seed: int = 0,
    initial_path: Optional[Path] = None,
    scheduler: Optional[IScheduler] = None,
) -> Tuple[ScalarField, SolveReport]:
    """
    Path deformation from gamma_0(t) = t * endpoint. The peak image climbs,
    the rest relax; points are redistributed on each side of the peak. The
    peak is then Newton-polished to a critical point of tf.
    """
    require(P >= MIN_PATH_POINTS, f"Path needs at least {MIN_PATH_POINTS} points, got {P}")
    grid = tf.grid
    x_end = values_of(endpoint)[grid.interior_index].copy()
    if not np.any(x_end):
        raise InvalidArgumentError("Mountain-pass endpoint must be nonzero")
    e_end = tf.energy(x_end)
    e_zero = tf.energy(np.zeros_like(x_end))
    if e_end >= e_zero:
        raise GeometryFailureError(
            f"Endpoint energy {e_end:.6g} is not below E(0)={e_zero:.6g}; lambda is too small for two solutions"
        )
    tol = default_tolerance(tf) if tol is None else tol
    path_tol = max(100.0 * tol, 1e-4 * tf.residual_scale())
    rng = np.random.default_rng(seed)
    end_scale = 1.0 + float(np.max(np.abs(x_end)))

    for attempt in range(retries + 1):
        if attempt == 0:
            path = initial_path if initial_path is not None else straight_path(tf, x_end, P)
        else:
            logger.warning(f"mountain pass attempt {attempt}: restarting from a bent path")
            path = _bent_path(tf, x_end, P, rng)
        path = _reparametrize(tf, path)
        it = 0
        res = np.inf
        for it in range(1, max_iter + 1):
            k = path.peak
            if k in (0, path.size - 1):
                raise GeometryFailureError(
                    f"Path collapsed onto an endpoint after {it} iterations",
                    last_iterate=tf.field(path.points[k]),
                )
            res = tf.residual_sup(path.points[k])
            if res <= path_tol:
                break
            path = _reparametrize(tf, _deform(tf, path, step, scheduler))
            logger.debug(f"path {it}: peak={k} level={path.max_energy:.10g} residual={res:.3e}")
        else:
            logger.warning(f"Path deformation hit {max_iter} iterations at residual {res:.3e}; polishing anyway")

        x, polished = newton_polish(tf, path.points[path.peak], tol, mode="critical")
        if np.max(np.abs(x - x_end)) <= 1e-6 * end_scale or np.max(np.abs(x)) <= 1e-6 * end_scale:
            logger.warning("Mountain-pass point coincides with an endpoint")
            continue
        u = tf.field(x)
        report = SolveReport(method="mountain_pass", epsilon=tf.params.epsilon)
        report.energy_eps = tf.energy(x)
        report.energy_exact = energy_exact(tf.group, grid, tf.params, u)
        report.residual_sup = tf.residual_sup(x)
        report.iterations = it + polished
        report.level = report.energy_eps
        report.history = [float(e) for e in path.energies]
        report.path = path
        report.converged = True
        logger.info(
            f"mountain pass: level={report.level:.10g} residual={report.residual_sup:.2e} "
            f"({it} path + {polished} Newton)"
        )
        return u, report
    raise GeometryFailureError(f"Mountain pass returned an endpoint in {retries + 1} attempts")


def mountain_pass_with_rim(
    tf: TruncatedFunctional,
    endpoint: ScalarField,
    P: int = MIN_PATH_POINTS,
    seed: int = 0,
    scheduler: Optional[IScheduler] = None,
    rim_directions: int = RIM_DIRECTIONS,
    **kwargs,
) -> Tuple[ScalarField, SolveReport]:
    """Mountain pass plus the m2 rim estimate at r = min(||u0|| / 2, 0.1)."""
    u1, report = mountain_pass(tf, endpoint, P, seed=seed, scheduler=scheduler, **kwargs)
    radius = min(0.5 * _h1(tf, values_of(endpoint)[tf.grid.interior_index]), 0.1)
    report.m2_estimate = rim_estimate(tf, radius, rim_directions, seed=seed, scheduler=scheduler)
    if report.m2_estimate <= 0.0:
        logger.warning(f"Rim estimate m2={report.m2_estimate:.3g} is not positive at r={radius:.3g}")
    return u1, report


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def critical_point_certificate(
    functional: EpsEnergy,
    u,
    directions: int = CERTIFICATE_DIRECTIONS,
    tol: float = 1e-6,
    seed: int = 0,
) -> CheckReport:
    """|<grad, v>| <= tol * ||v||_H1 for random directions v."""
    x = values_of(u)[functional.grid.interior_index]
    grad = functional.gradient(x)
    rng = np.random.default_rng(seed)
    worst = 0.0
    violations = 0
    for _ in range(directions):
        v = rng.standard_normal(x.size)
        ratio = abs(inner(grad, v)) / _h1(functional, v)
        worst = max(worst, ratio)
        violations += int(ratio > tol)
    return CheckReport("critical_point", violations == 0, {"worst_ratio": worst, "directions": directions}, violations)


def ordering_check(u1, u0, tol: float = 1e-6, distinct_tol: float = 1e-6) -> CheckReport:
    """0 < u1 <= u0 + tol, {u1 > 1} in {u0 > 1}, {u0 < 1} in {u1 < 1}."""
    grid = u0.grid
    a, b = values_of(u1), values_of(u0)
    interior = grid.interior_mask
    positivity = int(np.sum(a[interior] <= 0.0))
    order = int(np.sum(a[interior] > b[interior] + tol))
    upper = int(np.sum((a > 1.0) & ~(b > 1.0)))
    lower = int(np.sum((b < 1.0) & ~(a < 1.0) & interior))
    distance = float(np.max(np.abs(a - b)))
    inner_measure = haar_measure_of(grid, a > 1.0)
    violations = positivity + order + upper + lower
    details = {
        "positivity": positivity,
        "order": order,
        "upper_inclusion": upper,
        "lower_inclusion": lower,
        "sup_distance": distance,
        "distinct": distance > distinct_tol,
        "measure_u1_above_1": inner_measure,
        "nonempty": inner_measure > 0.0,
    }
    if not details["distinct"]:
        logger.warning("u1 and u0 coincide; no second solution")
    return CheckReport("ordering", violations == 0 and details["distinct"], details, violations)


def truncation_bound_excess(tf: TruncatedFunctional, s_values: Sequence[float]) -> float:
    """
    Largest excess of G~(x, s) over a0 (s-1)_+ + a1/p (s-1)_+^p across nodes
    and sample values; <= 0 when the growth bound holds.
    """
    prm = tf.params
    worst = -np.inf
    for s in s_values:
        x = np.full(tf.op.size, float(s))
        t = max(float(s) - 1.0, 0.0)
        bound = prm.a0 * t + prm.a1 / prm.p * t**prm.p
        worst = max(worst, float(np.max(tf.G_tilde(x) - bound)))
    return worst
