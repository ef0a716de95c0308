"""
Independent 1-D reference solutions by shooting, and dense parameter scans.

Both shooting problems are symmetric about L/2, so each profile is integrated
from x = 0 to its turning point and mirrored. The start at the singular
endpoint uses the two-term expansion

    u(x) = s x - beta s^-delta x^(2-delta) / ((1-delta)(2-delta))

which is the exact behaviour of -u'' = beta u^-delta near a zero of u with
slope s > 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.optimize import brentq

from .contracts import GeometryFailureError, InvalidArgumentError, NoSolutionError, require
from .geometry import group_model, make_grid
from .model import ModelParams, energy_exact, g_eval

logger = logging.getLogger(__name__)

START_FRACTION = 1e-9
JUMP = 2.0
LEVEL = 1.0


@dataclass(eq=False)
class Profile:
    """Nodal profile on [0, L] plus the shooting data that produced it."""

    x: np.ndarray
    u: np.ndarray
    slope: float
    crossings: Tuple[float, ...] = ()
    jump_slopes: Tuple[float, float] = (0.0, 0.0)
    self_convergence: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def max_value(self) -> float:
        return float(np.max(self.u))

    def jump_deviation(self) -> float:
        minus, plus = self.jump_slopes
        return abs(plus**2 - minus**2 - JUMP)


def _series_start(slope: float, beta: float, delta: float, x0: float) -> Tuple[float, float]:
    if beta == 0.0:
        return slope * x0, slope
    u = slope * x0 - beta * slope ** (-delta) * x0 ** (2.0 - delta) / ((1.0 - delta) * (2.0 - delta))
    v = slope - beta * slope ** (-delta) * x0 ** (1.0 - delta) / (1.0 - delta)
    return u, v


def _event(index: int, level: float, direction: float) -> Callable:
    def crossing(_x, y):
        return y[index] - level

    crossing.terminal = True
    crossing.direction = direction
    return crossing


def _integrate(rhs, x0: float, y0, x_end: float, events, rtol: float):
    return solve_ivp(
        rhs, (x0, x_end), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-3, events=events, dense_output=True
    )


def _outer_rhs(beta: float, delta: float):
    def rhs(_x, y):
        return [y[1], -beta * max(y[0], 1e-300) ** (-delta)]

    return rhs


def _inner_rhs(params: ModelParams):
    def rhs(_x, y):
        s = max(y[0] - LEVEL, 0.0)
        return [y[1], -params.lam * float(g_eval(params, s)) - params.beta * max(y[0], 1e-300) ** (-params.delta)]

    return rhs


def _turning_point(slope: float, beta: float, delta: float, length: float, rtol: float):
    x0 = START_FRACTION * length
    y0 = _series_start(slope, beta, delta, x0)
    if y0[1] <= 0.0:
        return x0, None
    sol = _integrate(_outer_rhs(beta, delta), x0, y0, 50.0 * length,
                     [_event(1, 0.0, -1.0)], rtol)
    if sol.status != 1 or not sol.t_events[0].size:
        return np.inf, sol
    return float(sol.t_events[0][0]), sol


def _mirror(x: np.ndarray, half: Callable[[np.ndarray], np.ndarray], length: float) -> np.ndarray:
    folded = np.minimum(x, length - x)
    return half(folded)


def _singular_profile(beta: float, delta: float, n: int, length: float, rtol: float) -> Profile:
    half = 0.5 * length

    def mismatch(s):
        return _turning_point(s, beta, delta, length, rtol)[0] - half

    lo, hi = 1e-6, 1.0
    for _ in range(200):
        if mismatch(hi) > 0.0:
            break
        lo, hi = hi, 4.0 * hi
    else:
        raise NoSolutionError(f"Could not bracket the shooting slope for beta={beta}, delta={delta}")
    if mismatch(lo) > 0.0:
        raise NoSolutionError(f"Lower shooting slope {lo} already overshoots")
    slope = brentq(mismatch, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    _, sol = _turning_point(slope, beta, delta, length, rtol)
    x0 = START_FRACTION * length

    def half_profile(xs):
        out = np.empty_like(xs)
        near = xs < x0
        out[near] = slope * xs[near]
        out[~near] = sol.sol(xs[~near])[0]
        return out

    x = np.linspace(0.0, length, n)
    u = _mirror(x, half_profile, length)
    u[[0, -1]] = 0.0
    return Profile(x, u, float(slope))


def shoot_singular(beta_param: float, delta: float, n: int, length: float = 1.0, rtol: float = 1e-11) -> Profile:
    """-u'' = beta u^-delta on (0, L), u(0) = u(L) = 0."""
    require(n >= 1000, f"Oracle profiles need n >= 1000 nodes, got {n}")
    require(beta_param > 0.0, "beta must be positive")
    require(0.0 < delta < 1.0, f"delta={delta} outside the admissible range 0<δ<1")
    coarse = _singular_profile(beta_param, delta, n, length, rtol)
    fine = _singular_profile(beta_param, delta, n, length, rtol * 1e-2)
    fine.self_convergence = float(np.max(np.abs(fine.u - coarse.u)) / np.max(np.abs(fine.u)))
    logger.info(f"Singular oracle: max={fine.max_value:.12g}, slope={fine.slope:.12g}, "
                f"self-convergence={fine.self_convergence:.2e}")
    return fine


def _outer_to_level(slope: float, params: ModelParams, length: float, rtol: float):
    """Integrate the outer equation until u = 1; None when u turns first."""
    x0 = START_FRACTION * length
    y0 = _series_start(slope, params.beta, params.delta, x0)
    if y0[1] <= 0.0:
        return None
    sol = _integrate(_outer_rhs(params.beta, params.delta), x0, y0, length,
                     [_event(0, LEVEL, 1.0), _event(1, 0.0, -1.0)], rtol)
    if sol.t_events[0].size:
        return float(sol.t_events[0][0]), float(sol.y_events[0][0][1]), sol
    return None


def _inner_from_level(a: float, slope_plus: float, params: ModelParams, length: float, rtol: float):
    sol = _integrate(_inner_rhs(params), a, [LEVEL, slope_plus], a + 50.0 * length,
                     [_event(1, 0.0, -1.0)], rtol)
    if not sol.t_events[0].size:
        return np.inf, sol
    return float(sol.t_events[0][0]), sol


def _matched(slope: float, params: ModelParams, length: float, rtol: float):
    hit = _outer_to_level(slope, params, length, rtol)
    if hit is None:
        return None
    a, q, outer = hit
    plus = float(np.sqrt(q * q + JUMP))
    m, inner = _inner_from_level(a, plus, params, length, rtol)
    return a, q, plus, m, outer, inner


def _free_boundary_branch(slope: float, params: ModelParams, n: int, length: float, rtol: float) -> Profile:
    matched = _matched(slope, params, length, rtol)
    if matched is None:
        raise GeometryFailureError(f"Shooting slope {slope} never reaches the level 1")
    a, q, plus, _m, outer, inner = matched
    x0 = START_FRACTION * length

    def half_profile(xs):
        out = np.empty_like(xs)
        near = xs < x0
        mid = (xs >= x0) & (xs <= a)
        far = xs > a
        out[near] = slope * xs[near]
        out[mid] = outer.sol(xs[mid])[0]
        out[far] = inner.sol(xs[far])[0]
        return out

    x = np.linspace(0.0, length, n)
    u = _mirror(x, half_profile, length)
    u[[0, -1]] = 0.0
    return Profile(x, u, float(slope), (a, length - a), (q, plus))


def _branch_slopes(params: ModelParams, length: float, rtol: float, samples: int) -> List[float]:
    half = 0.5 * length

    def mismatch(s):
        matched = _matched(s, params, length, rtol)
        return np.inf if matched is None else matched[3] - half

    slopes = np.logspace(-3, 4, samples)
    values = np.array([mismatch(s) for s in slopes])
    roots = []
    for i in np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0):
        if not (np.isfinite(values[i]) and np.isfinite(values[i + 1])):
            continue
        roots.append(brentq(mismatch, slopes[i], slopes[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    return roots


def shoot_free_boundary(params: ModelParams, n: int, length: float = 1.0, rtol: float = 1e-10,
                        samples: int = 400) -> Tuple[Profile, Profile]:
    """
    Match the outer (u < 1) and inner (u > 1) equations at the level 1 with
    (u'+)^2 - (u'-)^2 = 2. The matching equation is solved in the starting
    slope, which moves the crossing monotonically; the two roots give the
    stable branch (crossing nearer the wall) and the unstable one.
    """
    require(n >= 1000, f"Oracle profiles need n >= 1000 nodes, got {n}")
    roots = _branch_slopes(params, length, rtol, samples)
    if len(roots) < 2:
        raise GeometryFailureError(
            f"Found {len(roots)} matched branch(es) at lambda={params.lam}; need two (lambda below threshold?)"
        )
    branches = []
    for slope in roots:
        coarse = _free_boundary_branch(slope, params, n, length, rtol)
        fine = _free_boundary_branch(slope, params, n, length, rtol * 1e-2)
        fine.self_convergence = float(np.max(np.abs(fine.u - coarse.u)) / np.max(np.abs(fine.u)))
        branches.append(fine)
    branches.sort(key=lambda prof: prof.crossings[0])
    u0, u1 = branches[0], branches[-1]
    if np.any(u1.u > u0.u + 1e-8):
        logger.warning("Oracle branches are not ordered pointwise")
    logger.info(f"Free-boundary oracle: crossings u0={u0.crossings[0]:.6f}, u1={u1.crossings[0]:.6f}")
    return u0, u1


def oracle_energy(params: ModelParams, profile: Profile) -> float:
    """E of a profile, evaluated with the model's quadrature on the matching 1-D grid."""
    g = group_model("euclid1")
    grid = make_grid(g, (profile.x[0],), (profile.x[-1],), profile.x.size)
    return energy_exact(g, grid, params, profile.u)


@dataclass(frozen=True)
class ScanAxis:
    lo: float
    hi: float
    count: int
    log: bool = False

    def values(self) -> np.ndarray:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidArgumentError("Scan ranges must be finite")
        if self.log:
            return np.logspace(np.log10(self.lo), np.log10(self.hi), self.count)
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class ScanResult:
    value: float
    argument: Tuple[float, ...]


def dense_scan(fn: Callable[..., np.ndarray], axes: Sequence[ScanAxis], mode: str = "argmin") -> ScanResult:
    """
    Evaluate fn on the full tensor grid of the axes.

    argmin / argmax: extremal value and where it is attained.
    threshold: fn is a predicate; returns the largest first-axis value for
      which it holds somewhere along the remaining axes (nan if nowhere).
    integrate: trapezoid integral of a 1-D scan.
    """
    grids = [axis.values() for axis in axes]
    mesh = np.meshgrid(*grids, indexing="ij")
    values = np.asarray(fn(*mesh))
    if values.shape != mesh[0].shape:
        values = np.broadcast_to(values, mesh[0].shape)
    if mode in ("argmin", "argmax"):
        flat = int(np.argmin(values) if mode == "argmin" else np.argmax(values))
        idx = np.unravel_index(flat, values.shape)
        return ScanResult(float(values[idx]), tuple(float(m[idx]) for m in mesh))
    if mode == "threshold":
        hits = values.astype(bool).reshape(values.shape[0], -1).any(axis=1)
        if not hits.any():
            return ScanResult(float("nan"), ())
        top = float(grids[0][np.flatnonzero(hits)[-1]])
        return ScanResult(top, (top,))
    if mode == "integrate":
        require(len(axes) == 1, "integrate mode scans a single axis")
        return ScanResult(float(trapezoid(values, grids[0])), ())
    raise InvalidArgumentError(f"Unknown scan mode '{mode}'")
