"""
Stratified group models and the discrete box domain.

A group model is described by its dilation exponents and an affine frame:
the coefficient of Z_i along axis k at a point x is

    c_ik(x) = C0[i, k] + sum_j C1[i, k, j] * x_j

which covers the Euclidean spaces and the first Heisenberg group. New models
plug in through `register_group` without touching the operators.
"""

import logging
from dataclasses import dataclass, field
from functools import cache, cached_property
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .contracts import InvalidArgumentError, require

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GroupModel:
    """Dilation exponents plus an affine frame of generating vector fields."""

    name: str
    dilation_exponents: Tuple[int, ...]
    frame_constant: np.ndarray
    frame_linear: np.ndarray

    def __post_init__(self):
        n = len(self.dilation_exponents)
        if self.frame_constant.ndim != 2 or self.frame_constant.shape[1] != n:
            raise InvalidArgumentError(f"Frame of '{self.name}' must have {n} columns")
        if self.frame_linear.shape != self.frame_constant.shape + (n,):
            raise InvalidArgumentError(f"Linear frame part of '{self.name}' has the wrong shape")

    @property
    def ambient_dim(self) -> int:
        return len(self.dilation_exponents)

    @property
    def num_generators(self) -> int:
        return self.frame_constant.shape[0]

    @cached_property
    def anchor_axes(self) -> Tuple[int, ...]:
        """Axis each generator reduces to at the origin (Z_i(0) = d/dx_a)."""
        axes = tuple(int(np.argmax(np.abs(row))) for row in self.frame_constant)
        if len(set(axes)) != len(axes):
            raise InvalidArgumentError(f"Generators of '{self.name}' share an anchor axis")
        return axes

    @property
    def is_euclidean(self) -> bool:
        return not np.any(self.frame_linear) and self.num_generators == self.ambient_dim


def _euclidean(dim: int) -> GroupModel:
    return GroupModel(
        name=f"euclid{dim}",
        dilation_exponents=(1,) * dim,
        frame_constant=np.eye(dim),
        frame_linear=np.zeros((dim, dim, dim)),
    )


def _heisenberg() -> GroupModel:
    # Z1 = d1 + 2 x2 d3, Z2 = d2 - 2 x1 d3
    linear = np.zeros((2, 3, 3))
    linear[0, 2, 1] = 2.0
    linear[1, 2, 0] = -2.0
    return GroupModel(
        name="heis1",
        dilation_exponents=(1, 1, 2),
        frame_constant=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        frame_linear=linear,
    )


_GROUPS: Dict[str, Callable[[], GroupModel]] = {
    "euclid1": lambda: _euclidean(1),
    "euclid2": lambda: _euclidean(2),
    "euclid3": lambda: _euclidean(3),
    "heis1": _heisenberg,
}


def register_group(name: str, factory: Callable[[], GroupModel]) -> None:
    _GROUPS[name] = factory
    group_model.cache_clear()


@cache
def group_model(name: str) -> GroupModel:
    try:
        return _GROUPS[name]()
    except KeyError:
        raise InvalidArgumentError(f"Unknown group '{name}'. Available: {sorted(_GROUPS)}") from None


def available_groups() -> Tuple[str, ...]:
    return tuple(sorted(_GROUPS))


def _as_point(g: GroupModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (g.ambient_dim,):
        raise InvalidArgumentError(
            f"Point of dimension {x.shape[-1] if x.ndim else 0} does not match {g.name} (N={g.ambient_dim})"
        )
    return x


def dilate(g: GroupModel, x, d: float) -> np.ndarray:
    """T_d(x) = (d^{r_1} x_1, ..., d^{r_N} x_N)."""
    x = _as_point(g, x)
    require(d > 0, f"Dilation factor must be positive, got {d}")
    return x * np.power(float(d), np.asarray(g.dilation_exponents, dtype=float))


def homogeneous_dimension(g: GroupModel) -> int:
    return int(sum(g.dilation_exponents))


def frame_at(g: GroupModel, x) -> np.ndarray:
    """
    Coefficient vectors of Z_1..Z_{N1} at x.

    Accepts a single point (N,) -> (N1, N) or a batch (..., N) -> (..., N1, N).
    """
    x = _as_point(g, x)
    return g.frame_constant + np.einsum("ikj,...j->...ik", g.frame_linear, x)


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Uniform tensor grid on an axis-aligned box. Nodes are stored in row-major
    order; the outermost layer is the Dirichlet boundary.
    """

    box_lo: Tuple[float, ...]
    box_hi: Tuple[float, ...]
    resolution: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.box_lo) == len(self.box_hi) == len(self.resolution)):
            raise InvalidArgumentError("box_lo, box_hi and resolution must have equal length")
        for lo, hi, n in zip(self.box_lo, self.box_hi, self.resolution):
            if not hi > lo:
                raise InvalidArgumentError(f"Empty box side [{lo}, {hi}]")
            if n < 3:
                raise InvalidArgumentError(f"Resolution {n} leaves no interior nodes (need >= 3)")

    @property
    def ndim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.resolution)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.resolution))

    @cached_property
    def spacing(self) -> np.ndarray:
        lo, hi = np.asarray(self.box_lo, float), np.asarray(self.box_hi, float)
        return (hi - lo) / (np.asarray(self.resolution) - 1)

    @property
    def min_spacing(self) -> float:
        return float(self.spacing.min())

    @cached_property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(
            lo + h * np.arange(n) for lo, h, n in zip(self.box_lo, self.spacing, self.resolution)
        )

    @cached_property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.box_hi) - np.asarray(self.box_lo)))

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(num_nodes, ndim) node coordinates in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.ndim] = True
        return mask.ravel()

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask)

    @property
    def num_interior(self) -> int:
        return int(self.interior_index.size)

    @cached_property
    def axis_weights(self) -> Tuple[np.ndarray, ...]:
        """Per-axis trapezoid weights (half cells at the two ends)."""
        weights = []
        for h, n in zip(self.spacing, self.resolution):
            w = np.full(n, h)
            w[[0, -1]] = 0.5 * h
            weights.append(w)
        return tuple(weights)

    @cached_property
    def haar_weight(self) -> np.ndarray:
        """Lebesgue volume of each node's dual cell; sums to the box volume."""
        w = self.axis_weights[0]
        for wk in self.axis_weights[1:]:
            w = np.multiply.outer(w, wk)
        return np.asarray(w).ravel()

    def reshape(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.shape)


def make_grid(g: GroupModel, box_lo: Sequence[float], box_hi: Sequence[float], resolution) -> Grid:
    if isinstance(resolution, int):
        resolution = (resolution,) * g.ambient_dim
    grid = Grid(tuple(map(float, box_lo)), tuple(map(float, box_hi)), tuple(map(int, resolution)))
    if grid.ndim != g.ambient_dim:
        raise InvalidArgumentError(f"Grid of dimension {grid.ndim} does not match {g.name} (N={g.ambient_dim})")
    logger.debug(f"Grid {grid.resolution} on {grid.box_lo}..{grid.box_hi}, h={grid.spacing}")
    return grid


def unit_grid(g: GroupModel, n: int) -> Grid:
    return make_grid(g, (0.0,) * g.ambient_dim, (1.0,) * g.ambient_dim, n)


@dataclass(eq=False)
class ScalarField:
    """Nodal values on a grid, row-major."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.num_nodes:
            raise InvalidArgumentError(
                f"Field has {self.values.size} values, grid has {self.grid.num_nodes} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            bad = int(np.sum(~np.isfinite(self.values)))
            raise InvalidArgumentError(f"Field has {bad} non-finite value(s)")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.num_nodes))

    @classmethod
    def from_interior(cls, grid: Grid, interior: np.ndarray) -> "ScalarField":
        values = np.zeros(grid.num_nodes)
        values[grid.interior_index] = interior
        return cls(grid, values)

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior_index]

    def vanishes_on_boundary(self) -> bool:
        return bool(np.all(self.values[~self.grid.interior_mask] == 0.0))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def values_of(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def haar_measure_of(grid: Grid, mask) -> float:
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != grid.num_nodes:
        raise InvalidArgumentError("Mask does not match the grid")
    return float(np.sum(grid.haar_weight[mask]))


def box_mask(grid: Grid, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    """Nodes in the half-open box [lo, hi)."""
    x = grid.coordinates
    tol = 1e-12 * np.max(np.abs(grid.coordinates)) + 1e-14
    return np.all((x >= np.asarray(lo) - tol) & (x < np.asarray(hi) - tol), axis=1)


def connected_components(grid: Grid, mask) -> int:
    """Number of face-connected components of a nodal mask."""
    _, count = ndimage.label(grid.reshape(np.asarray(mask, dtype=bool)))
    return int(count)


def distance_to_boundary(grid: Grid, mask) -> float:
    """Smallest distance from a masked node to the box boundary (inf for an empty mask)."""
    mask = np.asarray(mask, dtype=bool).ravel()
    if not mask.any():
        return float("inf")
    x = grid.coordinates[mask]
    lo, hi = np.asarray(grid.box_lo), np.asarray(grid.box_hi)
    return float(np.min(np.minimum(x - lo, hi - x)))


def smooth_bump(grid: Grid, center: Sequence[float], radius: float) -> np.ndarray:
    """Nodal values of the C^2 bump (1 - |x - c|^2 / r^2)^3_+, zeroed on the boundary layer."""
    require(radius > 0.0, f"Bump radius must be positive, got {radius}")
    rho_sq = np.sum((grid.coordinates - np.asarray(center, dtype=float)) ** 2, axis=1) / radius**2
    values = np.maximum(1.0 - rho_sq, 0.0) ** 3
    values[~grid.interior_mask] = 0.0
    return values
