"""Report and result containers passed between solvers, continuation and the CLI."""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .geometry import ScalarField

STAGE_COLUMNS: Tuple[str, ...] = (
    "eps",
    "E_eps_u0",
    "E_u0",
    "E_eps_u1",
    "E_u1",
    "res_u0",
    "res_u1",
    "lip_u0",
    "lip_u1",
    "sup_delta_u0",
    "sup_delta_u1",
    "fb_cells",
    "jump_mean",
    "jump_max",
)

SOLVE_COLUMNS: Tuple[str, ...] = (
    "method",
    "eps",
    "energy_eps",
    "energy_exact",
    "residual_sup",
    "iterations",
    "m1_estimate",
    "m2_estimate",
    "level",
    "converged",
)


@dataclass
class SolveReport:
    """Outcome of one minimization or mountain-pass solve."""

    method: str
    epsilon: float
    energy_eps: float = float("nan")
    energy_exact: float = float("nan")
    residual_sup: float = float("nan")
    iterations: int = 0
    m1_estimate: float = float("nan")
    m2_estimate: float = float("nan")
    level: float = float("nan")
    converged: bool = False
    history: List[float] = field(default_factory=list, repr=False)
    path: Optional["Path"] = field(default=None, repr=False)

    def as_row(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "eps": self.epsilon,
            "energy_eps": self.energy_eps,
            "energy_exact": self.energy_exact,
            "residual_sup": self.residual_sup,
            "iterations": self.iterations,
            "m1_estimate": self.m1_estimate,
            "m2_estimate": self.m2_estimate,
            "level": self.level,
            "converged": int(self.converged),
        }


@dataclass
class Path:
    """
    Discrete path from gamma(0) = 0 to gamma(1) = endpoint. Points are interior
    value vectors; the first and last stay fixed.
    """

    points: List[np.ndarray]
    energies: np.ndarray

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def peak(self) -> int:
        return int(np.argmax(self.energies))

    @property
    def max_energy(self) -> float:
        return float(np.max(self.energies))


@dataclass
class StageReport:
    """One row of the continuation stage table plus bookkeeping columns."""

    eps: float
    E_eps_u0: float
    E_u0: float
    E_eps_u1: float
    E_u1: float
    res_u0: float
    res_u1: float
    lip_u0: float
    lip_u1: float
    sup_delta_u0: float = float("nan")
    sup_delta_u1: float = float("nan")
    fb_cells: int = 0
    jump_mean: float = float("nan")
    jump_max: float = float("nan")
    tolerance: float = float("nan")
    warm_start_energy: float = float("nan")
    warm_start_bound: float = float("nan")
    band_measure: float = float("nan")
    m2_estimate: float = float("nan")
    level: float = float("nan")

    def as_row(self) -> Dict[str, Any]:
        data = asdict(self)
        return {key: data[key] for key in STAGE_COLUMNS}


@dataclass
class FreeBoundary:
    """
    Edge crossings of the level u = 1. Arrays are indexed by crossing; each
    crossing sits on the edge (node_minus, node_plus) with u(node_plus) > 1.
    """

    node_minus: np.ndarray
    node_plus: np.ndarray
    location: np.ndarray
    normal: np.ndarray
    grad_plus_sq: np.ndarray
    grad_minus_sq: np.ndarray

    @classmethod
    def empty(cls, ndim: int) -> "FreeBoundary":
        none = np.zeros(0, dtype=int)
        return cls(none, none.copy(), np.zeros((0, ndim)), np.zeros((0, ndim)), np.zeros(0), np.zeros(0))

    @property
    def num_cells(self) -> int:
        return int(self.node_minus.size)

    def is_empty(self) -> bool:
        return self.num_cells == 0


@dataclass
class CheckReport:
    """Generic pass/fail diagnostic with the numbers it was judged on."""

    name: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)
    violations: int = 0

    def __bool__(self) -> bool:
        return self.passed


@dataclass
class ContinuationResult:
    u0: ScalarField
    u1: ScalarField
    stages: List[StageReport]
    free_boundary_u0: FreeBoundary
    free_boundary_u1: FreeBoundary
    u0_reports: List[SolveReport] = field(default_factory=list)
    u1_reports: List[SolveReport] = field(default_factory=list)
