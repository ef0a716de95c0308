"""
eps-continuation of the solution pair and the diagnostics run on its output:
free-boundary extraction, jump statistics, energy sandwich, Radon pairing and
the comparison/barrier/level-set checks.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .auxiliary import barrier_v0, build_cutoff, growth_bound
from .contracts import InvalidArgumentError, SolverError, require
from .geometry import (
    Grid,
    GroupModel,
    ScalarField,
    connected_components,
    distance_to_boundary,
    haar_measure_of,
    smooth_bump,
    values_of,
)
from .interfaces import IScheduler
from .model import CutoffContext, ModelParams, band_measure, energy_eps, energy_exact, g_eval, regularization_gap
from .operators import assemble_sub_laplacian, horizontal_gradient, inner, lipschitz_estimate, nodal_partials
from .solvers import (
    MIN_PATH_POINTS,
    RIM_DIRECTIONS,
    build_truncated,
    check_eps_threshold,
    default_tolerance,
    minimize_energy,
    mountain_pass_with_rim,
    multi_start_minimize,
)
from .structures import CheckReport, ContinuationResult, FreeBoundary, Path, StageReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationSchedule:
    eps_list: Tuple[float, ...]
    tolerances: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        eps = np.asarray(self.eps_list, dtype=float)
        if eps.size == 0 or np.any(eps <= 0.0):
            raise InvalidArgumentError("Continuation needs at least one positive eps")
        if np.any(np.diff(eps) >= 0.0):
            raise InvalidArgumentError(f"eps schedule must be strictly decreasing, got {self.eps_list}")
        if self.tolerances is not None and len(self.tolerances) != eps.size:
            raise InvalidArgumentError("One tolerance per stage is required")

    @classmethod
    def geometric(cls, eps0: float = 0.2, stages: int = 6, tolerance: Optional[float] = None) -> "ContinuationSchedule":
        """eps_j = eps0 * 2^-j for j = 0..stages."""
        require(stages >= 0, f"stages must be nonnegative, got {stages}")
        eps = tuple(eps0 * 0.5**j for j in range(stages + 1))
        return cls(eps, None if tolerance is None else (tolerance,) * len(eps))

    def __len__(self) -> int:
        return len(self.eps_list)

    def tolerance(self, j: int) -> Optional[float]:
        return None if self.tolerances is None else self.tolerances[j]


def _shift_path(path: Path, old_end: np.ndarray, new_end: np.ndarray) -> List[np.ndarray]:
    t = np.linspace(0.0, 1.0, path.size)
    return [p + tj * (new_end - old_end) for p, tj in zip(path.points, t)]


def run_continuation(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    schedule: ContinuationSchedule,
    *,
    ctx: Optional[CutoffContext] = None,
    restarts: int = 8,
    seed: int = 0,
    path_points: int = MIN_PATH_POINTS,
    max_iter: int = 2000,
    rim_directions: int = RIM_DIRECTIONS,
    scheduler: Optional[IScheduler] = None,
) -> ContinuationResult:
    """
    Solve for u0 and u1 at every eps of the schedule, warm-starting each stage
    from the previous one. Solver errors leave with the failing stage attached.
    """
    ctx = ctx or build_cutoff(g, grid, params)
    stages: List[StageReport] = []
    u0_reports, u1_reports = [], []
    u0: Optional[ScalarField] = None
    u1: Optional[ScalarField] = None
    path: Optional[Path] = None
    m1 = float("nan")
    previous_energy = float("nan")
    total = len(schedule)

    for j, eps in enumerate(schedule.eps_list):
        prm = params.with_eps(eps)
        tol = schedule.tolerance(j)
        logger.info(f"Stage {j + 1}/{total}: eps={eps:.6g}")
        try:
            if u0 is None:
                best = multi_start_minimize(g, grid, prm, ctx, restarts, seed, scheduler, tol=tol, max_iter=max_iter)
                new_u0, rep0 = best.field, best.report
                m1 = rep0.m1_estimate
                check_eps_threshold(prm, m1, grid.volume)
                warm_energy = warm_bound = float("nan")
            else:
                warm_energy = energy_eps(g, grid, prm, ctx, u0)
                d_eps = schedule.eps_list[j - 1] - eps
                warm_bound = previous_energy + prm.lam * (prm.a0 * d_eps + prm.a1 * d_eps**prm.p / prm.p) * grid.volume
                if warm_energy > warm_bound + 1e-9 * max(1.0, abs(warm_bound)):
                    logger.warning(f"Warm start energy {warm_energy:.8g} exceeds the bound {warm_bound:.8g}")
                new_u0, rep0 = minimize_energy(g, grid, prm, ctx, u0, tol=tol, max_iter=max_iter, m1=m1)
                rep0.m1_estimate = m1

            tf = build_truncated(g, grid, prm, ctx, new_u0)
            initial = None
            if path is not None and u0 is not None:
                points = _shift_path(path, u0.interior, new_u0.interior)
                initial = Path(points, np.array([tf.energy(p) for p in points]))
            new_u1, rep1 = mountain_pass_with_rim(
                tf,
                new_u0,
                path_points,
                seed=seed,
                scheduler=scheduler,
                rim_directions=rim_directions,
                tol=tol,
                initial_path=initial,
            )
        except SolverError as exc:
            exc.stage = j
            exc.add_note(f"continuation stage {j} (eps={eps:g})")
            raise

        if np.any(new_u1.values > new_u0.values + 1e-6):
            logger.warning("Mountain-pass point exceeds the truncation cap u0")
        fb = extract_free_boundary(g, grid, new_u0)
        jump = jump_check(fb) if not fb.is_empty() else {"mean": float("nan"), "max": float("nan")}
        stage = StageReport(
            eps=eps,
            E_eps_u0=rep0.energy_eps,
            E_u0=rep0.energy_exact,
            E_eps_u1=rep1.energy_eps,
            E_u1=rep1.energy_exact,
            res_u0=rep0.residual_sup,
            res_u1=rep1.residual_sup,
            lip_u0=lipschitz_estimate(g, grid, new_u0),
            lip_u1=lipschitz_estimate(g, grid, new_u1),
            sup_delta_u0=float("nan") if u0 is None else float(np.max(np.abs(new_u0.values - u0.values))),
            sup_delta_u1=float("nan") if u1 is None else float(np.max(np.abs(new_u1.values - u1.values))),
            fb_cells=fb.num_cells,
            jump_mean=jump["mean"],
            jump_max=jump["max"],
            tolerance=default_tolerance(tf) if tol is None else tol,
            warm_start_energy=warm_energy,
            warm_start_bound=warm_bound,
            band_measure=band_measure(grid, new_u0, grid.min_spacing),
            m2_estimate=rep1.m2_estimate,
            level=rep1.level,
        )
        stages.append(stage)
        u0_reports.append(rep0)
        u1_reports.append(rep1)
        u0, u1, path = new_u0, new_u1, rep1.path
        previous_energy = rep0.energy_eps
        logger.info(
            f"Stage {j + 1}/{total} done: E(u0)={stage.E_u0:.8g} E(u1)={stage.E_u1:.8g} fb_cells={fb.num_cells}"
        )

    assert u0 is not None and u1 is not None
    return ContinuationResult(
        u0=u0,
        u1=u1,
        stages=stages,
        free_boundary_u0=extract_free_boundary(g, grid, u0),
        free_boundary_u1=extract_free_boundary(g, grid, u1),
        u0_reports=u0_reports,
        u1_reports=u1_reports,
    )


# ---------------------------------------------------------------------------
# Free boundary
# ---------------------------------------------------------------------------


def _extrapolate(distances: Sequence[float], values: np.ndarray) -> np.ndarray:
    """Polynomial through (distance, value) rows evaluated at distance 0."""
    d = np.asarray(distances, dtype=float)
    if d.size == 1:
        return values[0]
    out = np.zeros(values.shape[1])
    for i in range(d.size):
        others = np.delete(d, i)
        out += values[i] * np.prod(others / (others - d[i]))
    return out


def _one_sided_trace(
    grid: Grid, above: np.ndarray, grad: np.ndarray, start: int, step: Tuple[int, int], first_distance: float, h: float, on_plus: bool
) -> np.ndarray:
    """
    Gradient trace at a crossing from the nodes start + k*step (k = 1..3),
    skipping the node adjacent to the crossing. Stops at the first node whose
    stencil reaches the other side.
    """
    index = np.unravel_index(int(start), grid.shape)
    axis, direction = step
    samples, distances = [], []
    for k in range(1, 4):
        pos = list(index)
        pos[axis] += direction * k
        nxt = list(index)
        nxt[axis] += direction * (k + 1)
        if not 0 <= pos[axis] < grid.shape[axis]:
            break
        node = int(np.ravel_multi_index(tuple(pos), grid.shape))
        if bool(above[node]) != on_plus:
            break
        if 0 <= nxt[axis] < grid.shape[axis]:
            if bool(above[int(np.ravel_multi_index(tuple(nxt), grid.shape))]) != on_plus:
                break
        samples.append(grad[node])
        distances.append(first_distance + k * h)
    if not samples:
        return grad[int(start)]
    return _extrapolate(distances, np.asarray(samples))


def extract_free_boundary(g: GroupModel, grid: Grid, u) -> FreeBoundary:
    """Edge crossings of u = 1 with one-sided horizontal-gradient traces."""
    values = values_of(u)
    above = values > 1.0
    if not above.any() or above.all():
        return FreeBoundary.empty(grid.ndim)
    grad = horizontal_gradient(g, grid, values).components
    euclid = nodal_partials(grid, values)
    index = np.arange(grid.num_nodes).reshape(grid.shape)
    coords = grid.coordinates

    minus_nodes, plus_nodes, locations, normals, plus_sq, minus_sq = [], [], [], [], [], []
    for axis in range(grid.ndim):
        h = float(grid.spacing[axis])
        lo = index.take(np.arange(grid.shape[axis] - 1), axis=axis).ravel()
        hi = index.take(np.arange(1, grid.shape[axis]), axis=axis).ravel()
        crossing = above[lo] != above[hi]
        for p, q in zip(lo[crossing], hi[crossing]):
            theta = (1.0 - values[p]) / (values[q] - values[p])
            location = coords[p] + theta * (coords[q] - coords[p])
            plus, minus = (q, p) if above[q] else (p, q)
            direction = 1 if plus == q else -1
            dist_plus = (1.0 - theta) * h if plus == q else theta * h
            dist_minus = h - dist_plus
            trace_plus = _one_sided_trace(grid, above, grad, plus, (axis, direction), dist_plus, h, True)
            trace_minus = _one_sided_trace(grid, above, grad, minus, (axis, -direction), dist_minus, h, False)
            normal = (1.0 - theta) * euclid[p] + theta * euclid[q]
            norm = float(np.linalg.norm(normal))
            minus_nodes.append(minus)
            plus_nodes.append(plus)
            locations.append(location)
            normals.append(normal / norm if norm > 0.0 else normal)
            plus_sq.append(float(np.sum(trace_plus**2)))
            minus_sq.append(float(np.sum(trace_minus**2)))

    fb = FreeBoundary(
        node_minus=np.asarray(minus_nodes, dtype=int),
        node_plus=np.asarray(plus_nodes, dtype=int),
        location=np.asarray(locations).reshape(-1, grid.ndim),
        normal=np.asarray(normals).reshape(-1, grid.ndim),
        grad_plus_sq=np.asarray(plus_sq),
        grad_minus_sq=np.asarray(minus_sq),
    )
    logger.debug(f"Free boundary: {fb.num_cells} crossing edges")
    return fb


def jump_check(fb: FreeBoundary) -> Dict[str, float]:
    """Mean and max of |grad+^2 - grad-^2 - 2| over the crossings."""
    if fb.is_empty():
        raise InvalidArgumentError("jump_check needs a nonempty free boundary")
    deviation = np.abs(fb.grad_plus_sq - fb.grad_minus_sq - 2.0)
    return {"mean": float(np.mean(deviation)), "max": float(np.max(deviation))}


def free_boundary_distance(grid: Grid, u) -> float:
    """Distance from {u >= 1} to the box boundary."""
    return distance_to_boundary(grid, values_of(u) >= 1.0)


# ---------------------------------------------------------------------------
# Post-solve checks
# ---------------------------------------------------------------------------


def energy_sandwich_check(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    u,
    stages: Sequence[StageReport],
    branch: str = "u0",
) -> CheckReport:
    """
    E(u) - slack <= E_eps_j(u_j) <= E(u) + H{|u - 1| <= h} + slack on the last
    three stages, slack = 10 * stage tolerance + regularization gap at eps_j.
    """
    require(len(stages) >= 3, f"Energy sandwich needs at least 3 stages, got {len(stages)}")
    require(branch in ("u0", "u1"), f"Unknown branch '{branch}'")
    exact = energy_exact(g, grid, params, u)
    band = band_measure(grid, u, grid.min_spacing)
    rows, violations = [], 0
    for stage in stages[-3:]:
        value = stage.E_eps_u0 if branch == "u0" else stage.E_eps_u1
        slack = 10.0 * stage.tolerance + regularization_gap(params.with_eps(stage.eps), grid.volume)
        ok = exact - slack <= value <= exact + band + slack
        violations += int(not ok)
        rows.append({"eps": stage.eps, "E_eps": value, "slack": slack, "ok": ok})
    return CheckReport("energy_sandwich", violations == 0, {"E": exact, "band": band, "stages": rows}, violations)


def stage_convergence_check(stages: Sequence[StageReport], lipschitz_factor: float = 1.2) -> CheckReport:
    """Sup-norm stage deltas decrease over the last three stages; Lipschitz bound stays near its median."""
    deltas = [s.sup_delta_u0 for s in stages if np.isfinite(s.sup_delta_u0)]
    tail = deltas[-3:]
    decreasing = len(tail) >= 2 and all(b <= a for a, b in zip(tail[:-1], tail[1:]))
    lips = np.array([s.lip_u0 for s in stages])
    bounded = bool(np.max(lips) <= lipschitz_factor * np.median(lips))
    violations = int(not decreasing) + int(not bounded)
    details = {"sup_deltas": tail, "lip_max": float(np.max(lips)), "lip_median": float(np.median(lips))}
    return CheckReport("stage_convergence", violations == 0, details, violations)


def _bump_in(grid: Grid, mask: np.ndarray, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Random bump whose support ball contains only masked nodes."""
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        return None
    center = grid.coordinates[rng.choice(candidates)]
    outside = grid.coordinates[~mask]
    radius = float(np.min(np.linalg.norm(outside - center, axis=1)))
    radius = min(radius, 0.25 * float(np.min(np.asarray(grid.box_hi) - np.asarray(grid.box_lo))))
    if radius <= grid.min_spacing:
        return None
    return smooth_bump(grid, center, radius) * rng.uniform(0.5, 1.0)


def radon_measure_check(
    g: GroupModel,
    grid: Grid,
    params: ModelParams,
    u,
    trials: int = 50,
    seed: int = 0,
    tol: float = 1e-8,
    rel_tol: float = 1e-6,
    residual: Optional[np.ndarray] = None,
) -> CheckReport:
    """
    Pairs M = W beta u^-delta - A u with random nonnegative bumps: M >= 0 on
    bumps inside {u < 1 - 2h}, and -M = lam W g((u-1)+) on bumps inside
    {u > 1 + max(2h, eps)}. `residual` is the weak residual of the discrete
    solve on interior nodes; its absolute pairing with the bump is allowed
    on both sides.
    """
    values = values_of(u)
    op = assemble_sub_laplacian(g, grid)
    idx = grid.interior_index
    x = values[idx]
    require(bool(np.all(x > 0.0)), "radon_measure_check needs u > 0 at interior nodes")
    w = op.interior_weight
    measure = w * params.beta * x ** (-params.delta) - op.apply_full(values)[idx]
    source = params.lam * w * g_eval(params, np.maximum(x - 1.0, 0.0))
    allowance = np.zeros_like(x) if residual is None else np.abs(np.asarray(residual, dtype=float))

    h = grid.min_spacing
    low = (values < 1.0 - 2.0 * h) & grid.interior_mask
    high = (values > 1.0 + max(2.0 * h, params.epsilon)) & grid.interior_mask
    rng = np.random.default_rng(seed)
    worst_low, worst_high = np.inf, 0.0
    low_trials = high_trials = violations = 0
    for _ in range(trials):
        for mask, kind in ((low, "low"), (high, "high")):
            bump = _bump_in(grid, mask, rng)
            if bump is None:
                continue
            xi = bump[idx]
            norm = float(np.sqrt(max(inner(xi, op.apply(xi)), 0.0)))
            pairing = inner(measure, xi)
            if kind == "low":
                low_trials += 1
                ok = pairing >= -tol * norm - inner(allowance, xi)
                worst_low = min(worst_low, pairing / norm if norm else 0.0)
            else:
                high_trials += 1
                target = -inner(source, xi)
                gap = abs(pairing - target)
                ok = gap <= rel_tol * abs(target) + inner(allowance, xi)
                worst_high = max(worst_high, gap / max(abs(target), 1e-300))
            violations += int(not ok)
    details = {
        "low_trials": low_trials,
        "high_trials": high_trials,
        "worst_low_ratio": worst_low if low_trials else float("nan"),
        "worst_high_rel": worst_high if high_trials else float("nan"),
    }
    return CheckReport("radon_measure", violations == 0, details, violations)


def comparison_check(u, u_beta, tol: float = 1e-6, strict_fraction: float = 0.99) -> CheckReport:
    """u >= u_beta - tol at every node and u > u_beta on at least strict_fraction of the interior."""
    grid = u.grid
    a, b = values_of(u)[grid.interior_index], values_of(u_beta)[grid.interior_index]
    below = int(np.sum(a < b - tol))
    strict = float(np.mean(a > b)) if a.size else 1.0
    passed = below == 0 and strict >= strict_fraction
    return CheckReport("comparison", passed, {"below": below, "strict_fraction": strict}, below)


def barrier_check(g: GroupModel, grid: Grid, params: ModelParams, u, u_beta, tol: float = 1e-6) -> CheckReport:
    """u <= v0 with v0 the barrier for A0 = growth_bound(sup u)."""
    values = values_of(u)
    A0 = growth_bound(params, float(np.max(values)))
    v0 = barrier_v0(g, grid, params, u_beta, A0)
    above = int(np.sum(values > v0.values + tol))
    d0 = free_boundary_distance(grid, v0)
    du = free_boundary_distance(grid, values)
    details = {"A0": A0, "above": above, "d0": d0, "distance_u": du}
    passed = above == 0 and du >= d0 - 1e-12
    return CheckReport("barrier", passed, details, above)


def level_set_report(grid: Grid, u0, u1) -> CheckReport:
    """
    Inclusions {u1 > 1} in {u0 > 1} and {u0 < 1} in {u1 < 1}; component counts
    are reported only.
    """
    a, b = values_of(u1), values_of(u0)
    interior = grid.interior_mask
    upper = int(np.sum((a > 1.0) & ~(b > 1.0)))
    lower = int(np.sum((b < 1.0) & ~(a < 1.0) & interior))
    components = {
        "u0_below_1": connected_components(grid, (b < 1.0) & interior),
        "u1_below_1": connected_components(grid, (a < 1.0) & interior),
        "u0_above_1": connected_components(grid, b > 1.0),
        "u1_above_1": connected_components(grid, a > 1.0),
    }
    for name, count in components.items():
        if count > 1:
            logger.warning(f"{{{name}}} has {count} grid components")
    details = {
        "upper_inclusion": upper,
        "lower_inclusion": lower,
        "components": components,
        "measure_u0_above_1": haar_measure_of(grid, b > 1.0),
        "measure_u1_above_1": haar_measure_of(grid, a > 1.0),
    }
    return CheckReport("level_sets", upper + lower == 0, details, upper + lower)


def energy_separation_check(g: GroupModel, grid: Grid, params: ModelParams, u0, u1) -> CheckReport:
    """E(u0) < -H(Omega) <= -H{|u1 - 1| <= h} < E(u1)."""
    e0 = energy_exact(g, grid, params, u0)
    e1 = energy_exact(g, grid, params, u1)
    band = band_measure(grid, u1, grid.min_spacing)
    passed = e0 < -grid.volume <= -band < e1
    return CheckReport("energy_separation", passed, {"E_u0": e0, "E_u1": e1, "volume": grid.volume, "band": band})
