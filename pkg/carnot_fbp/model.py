"""
Nonlinearity g, mollifier pair, singular cutoff and the energies E / E_eps.

Bulk terms are evaluated on interior nodes only; boundary nodes carry u = 0
and contribute nothing but their gradient coupling, which lives in A.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from .contracts import InvalidArgumentError
from .geometry import Grid, GroupModel, ScalarField, values_of
from .operators import DiscreteOperator, assemble_sub_laplacian, inner

logger = logging.getLogger(__name__)


class GKind(str, Enum):
    CONSTANT_ONE = "constant_one"
    POWER = "power"
    AFFINE_POWER = "affine_power"


@dataclass(frozen=True)
class ModelParams:
    """
    lam: strength of the g term; beta: singular strength; delta, p: exponents;
    a0, a1: growth constants with g(s) <= a0 + a1 s^(p-1); epsilon: mollifier scale.
    """

    lam: float = 0.0
    beta: float = 0.1
    delta: float = 0.5
    p: float = 1.5
    a0: float = 1.0
    a1: float = 1.0
    epsilon: float = 0.2
    g_kind: GKind = GKind.CONSTANT_ONE

    def __post_init__(self):
        object.__setattr__(self, "g_kind", GKind(self.g_kind))
        if not 0.0 < self.delta < 1.0:
            raise InvalidArgumentError(f"delta={self.delta} outside the admissible range 0<δ<1")
        if not 1.0 < self.p < 2.0:
            raise InvalidArgumentError(f"p={self.p} outside the admissible range 1<p<2")
        if self.epsilon <= 0.0:
            raise InvalidArgumentError(f"epsilon={self.epsilon} must be positive")
        if self.lam < 0.0 or self.beta < 0.0:
            raise InvalidArgumentError("lambda and beta must be nonnegative")
        if self.a0 < 0.0 or self.a1 < 0.0:
            raise InvalidArgumentError("growth constants a0, a1 must be nonnegative")
        c0, c1 = self.g_coefficients
        if c0 > self.a0 or c1 > self.a1:
            raise InvalidArgumentError(
                f"g_kind={self.g_kind.value} violates g <= a0 + a1 s^(p-1) with a0={self.a0}, a1={self.a1}"
            )
        if c0 == 0.0 and c1 == 0.0:
            raise InvalidArgumentError("g must be positive for s > 0 (a0 = a1 = 0)")

    @property
    def g_coefficients(self) -> Tuple[float, float]:
        """(c0, c1) with g(s) = c0 + c1 s^(p-1)."""
        if self.g_kind is GKind.CONSTANT_ONE:
            return 1.0, 0.0
        if self.g_kind is GKind.POWER:
            return 0.0, 1.0
        return self.a0, self.a1

    @property
    def g_positive_at_zero(self) -> bool:
        return self.g_coefficients[0] > 0.0

    def with_eps(self, epsilon: float) -> "ModelParams":
        return replace(self, epsilon=float(epsilon))

    def with_lambda(self, lam: float) -> "ModelParams":
        return replace(self, lam=float(lam))

    def with_beta(self, beta: float) -> "ModelParams":
        return replace(self, beta=float(beta))


# Mollifier pair: quintic smoothstep and its derivative.

def eval_B(s):
    t = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def eval_mollifier(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    t = np.where(inside, s, 0.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


def mollifier_derivative(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    t = np.where(inside, s, 0.0)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


_B_COEFFS = ((3, 10.0), (4, -15.0), (5, 6.0))


def _smoothed_moment(s: np.ndarray, eps: float, q: float) -> np.ndarray:
    """Closed form of int_0^s B(t/eps) t^q dt for s >= 0."""
    low = np.minimum(s, eps)
    head = sum(c * low ** (m + q + 1) / (eps**m * (m + q + 1)) for m, c in _B_COEFFS)
    tail = (np.maximum(s, eps) ** (q + 1) - eps ** (q + 1)) / (q + 1)
    return head + np.where(s > eps, tail, 0.0)


def _check_nonnegative(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise InvalidArgumentError("g is only defined for s >= 0")
    return s


def g_eval(params: ModelParams, s):
    s = _check_nonnegative(s)
    c0, c1 = params.g_coefficients
    return c0 + c1 * s ** (params.p - 1.0)


def G_eval(params: ModelParams, s):
    s = _check_nonnegative(s)
    c0, c1 = params.g_coefficients
    return c0 * s + c1 * s**params.p / params.p


def g_eps(params: ModelParams, s):
    s = _check_nonnegative(s)
    return eval_B(s / params.epsilon) * g_eval(params, s)


def G_eps(params: ModelParams, s):
    s = _check_nonnegative(s)
    c0, c1 = params.g_coefficients
    out = np.zeros_like(s)
    if c0:
        out = out + c0 * _smoothed_moment(s, params.epsilon, 0.0)
    if c1:
        out = out + c1 * _smoothed_moment(s, params.epsilon, params.p - 1.0)
    return out


def g_eps_derivative(params: ModelParams, s):
    s = _check_nonnegative(s)
    c0, c1 = params.g_coefficients
    eps = params.epsilon
    positive = s > 0.0
    safe = np.where(positive, s, 1.0)
    dg = np.where(positive, c1 * (params.p - 1.0) * safe ** (params.p - 2.0), 0.0)
    return eval_mollifier(s / eps) / eps * g_eval(params, s) + eval_B(s / eps) * dg


def regularization_gap(params: ModelParams, volume: float) -> float:
    """Upper bound lam (a0 eps + a1 eps^p / p) vol on E - E_eps from the g term."""
    eps = params.epsilon
    return params.lam * (params.a0 * eps + params.a1 * eps**params.p / params.p) * volume


def eps_threshold(params: ModelParams, m1: float, volume: float) -> float:
    """eps_0(lambda) = min(|m1| / (2 lam a0 vol), (p a0 / a1)^(1/(p-1)))."""
    first = np.inf if params.lam * params.a0 == 0.0 else abs(m1) / (2.0 * params.lam * params.a0 * volume)
    second = np.inf if params.a1 == 0.0 else (params.p * params.a0 / params.a1) ** (1.0 / (params.p - 1.0))
    return float(min(first, second))


@dataclass(frozen=True, eq=False)
class CutoffContext:
    """Auxiliary solution u_beta below which u^-delta is frozen."""

    u_beta: ScalarField
    delta: float

    def __post_init__(self):
        if not np.all(self.u_beta.interior > 0.0):
            raise InvalidArgumentError("u_beta must be positive at every interior node")

    @property
    def interior(self) -> np.ndarray:
        return self.u_beta.interior


def _phi(ub, u, delta):
    return np.maximum(u, ub) ** (-delta)


def _Phi(ub, u, delta):
    above = u > ub
    u_safe = np.where(above, u, ub)
    tail = ub ** (1.0 - delta) + (u_safe ** (1.0 - delta) - ub ** (1.0 - delta)) / (1.0 - delta)
    return np.where(above, tail, u * ub ** (-delta))


def _phi_prime(ub, u, delta):
    above = u > ub
    u_safe = np.where(above, u, ub)
    return np.where(above, -delta * u_safe ** (-delta - 1.0), 0.0)


def phi_beta(ctx: CutoffContext, node: int, u_val: float) -> float:
    ub = float(ctx.u_beta.values[node])
    if ub <= 0.0:
        raise InvalidArgumentError(f"u_beta is not positive at node {node}")
    return float(_phi(ub, u_val, ctx.delta))


def Phi_beta(ctx: CutoffContext, node: int, u_val: float) -> float:
    ub = float(ctx.u_beta.values[node])
    if ub <= 0.0:
        raise InvalidArgumentError(f"u_beta is not positive at node {node}")
    return float(_Phi(ub, u_val, ctx.delta))


class EpsEnergy:
    """
    E_eps restricted to interior values x. The quadratic part is 1/2 x^T A x;
    the bulk density and its first two derivatives are overridable so the
    truncated functional can reuse the whole machinery.
    """

    def __init__(self, group: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext):
        if ctx.delta != params.delta:
            raise InvalidArgumentError(f"Cutoff built for delta={ctx.delta}, params use delta={params.delta}")
        self.group = group
        self.grid = grid
        self.params = params
        self.ctx = ctx
        self.op: DiscreteOperator = assemble_sub_laplacian(group, grid)
        self.weight = self.op.interior_weight
        self.ub = ctx.interior

    # bulk density b(u) and derivatives, per interior node
    def bulk(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        s = np.maximum(x - 1.0, 0.0)
        return eval_B((x - 1.0) / prm.epsilon) - prm.lam * G_eps(prm, s) - prm.beta * _Phi(self.ub, x, prm.delta)

    def bulk_prime(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        s = np.maximum(x - 1.0, 0.0)
        return (
            eval_mollifier((x - 1.0) / prm.epsilon) / prm.epsilon
            - prm.lam * g_eps(prm, s)
            - prm.beta * _phi(self.ub, x, prm.delta)
        )

    def bulk_second(self, x: np.ndarray) -> np.ndarray:
        prm = self.params
        s = np.maximum(x - 1.0, 0.0)
        return (
            mollifier_derivative((x - 1.0) / prm.epsilon) / prm.epsilon**2
            - prm.lam * np.where(x > 1.0, g_eps_derivative(prm, s), 0.0)
            - prm.beta * _phi_prime(self.ub, x, prm.delta)
        )

    def energy(self, x: np.ndarray) -> float:
        return 0.5 * inner(x, self.op.apply(x)) + inner(self.weight, self.bulk(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.op.apply(x) + self.weight * self.bulk_prime(x)

    def hessian(self, x: np.ndarray):
        return (self.op.matrix + sp.diags(self.weight * self.bulk_second(x))).tocsr()

    def strong_residual(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(x) / self.weight

    def residual_sup(self, x: np.ndarray) -> float:
        return float(np.max(np.abs(self.strong_residual(x)))) if x.size else 0.0

    def residual_scale(self) -> float:
        prm = self.params
        a0, a1 = prm.a0, prm.a1
        singular = prm.beta * float(np.max(self.ub ** (-prm.delta))) if self.ub.size else 0.0
        return 1.0 + prm.lam * (a0 + a1) + singular

    def field(self, x: np.ndarray) -> ScalarField:
        return ScalarField.from_interior(self.grid, x)


def _interior_of(grid: Grid, u) -> np.ndarray:
    return values_of(u)[grid.interior_index]


def energy_exact(g: GroupModel, grid: Grid, params: ModelParams, u) -> float:
    values = values_of(u)
    op = assemble_sub_laplacian(g, grid)
    x = values[grid.interior_index]
    w = op.interior_weight
    s = np.maximum(x - 1.0, 0.0)
    bulk = (x > 1.0).astype(float) - params.lam * G_eval(params, s)
    singular = params.beta / (1.0 - params.delta) * inner(w, np.maximum(x, 0.0) ** (1.0 - params.delta))
    return 0.5 * op.energy_inner(values, values) + inner(w, bulk) - singular


def energy_eps(g: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext, u) -> float:
    values = values_of(u)
    functional = EpsEnergy(g, grid, params, ctx)
    x = values[grid.interior_index]
    return 0.5 * functional.op.energy_inner(values, values) + inner(functional.weight, functional.bulk(x))


def residual_eps(g: GroupModel, grid: Grid, params: ModelParams, ctx: CutoffContext, u) -> ScalarField:
    values = values_of(u)
    functional = EpsEnergy(g, grid, params, ctx)
    x = values[grid.interior_index]
    r = functional.op.apply_full(values)[grid.interior_index] + functional.weight * functional.bulk_prime(x)
    return ScalarField.from_interior(grid, r)


def band_measure(grid: Grid, u, width: float) -> float:
    """Haar measure of {|u - 1| <= width}, the grid proxy for {u = 1}."""
    values = values_of(u)
    mask = (np.abs(values - 1.0) <= width) & grid.interior_mask
    return float(np.sum(grid.haar_weight[mask]))
