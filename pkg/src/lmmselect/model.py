"""Data model for penalized linear mixed models.

The model is y = x @ beta + z @ u + noise, with a sparse fixed-effect
vector beta (selected via an l1 penalty) and a dense random-effect vector
u shrunk by a weighted quadratic penalty lam_u * u' W u.  Columns of z are
partitioned into contiguous variance-component groups; the penalty weight
matrix W is built from that group structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .exceptions import DimensionMismatch, GroupSumMismatch, NonPsdWeight

IDENTITY = "identity"
PER_GROUP_PARAMS = "per_group_params"
PER_GROUP_WEIGHTS = "per_group_weights"
FULL_MATRIX = "full_matrix"

SYM_PSD_RTOL = 1e-10


def _readonly(a: NDArray, dtype=np.float64) -> NDArray:
    out = np.array(a, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GroupStructure:
    """Partition of the z columns into contiguous variance-component blocks.

    ``sizes[i]`` is the number of z columns owned by component i; column
    ordering is part of the data contract (block i covers the contiguous
    column range given by the running sum of sizes).
    """

    sizes: tuple[int, ...]

    def __init__(self, sizes) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in sizes))
        if any(s <= 0 for s in self.sizes):
            raise GroupSumMismatch(f"group sizes must be positive, got {self.sizes}")

    @property
    def count(self) -> int:
        """Number of variance components."""
        return len(self.sizes)

    @property
    def total(self) -> int:
        """Total number of z columns covered."""
        return sum(self.sizes)

    def slices(self) -> list[slice]:
        """Column slice of z for each component, in order."""
        bounds = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        return [slice(bounds[i], bounds[i + 1]) for i in range(self.count)]


@dataclass(frozen=True, eq=False)
class LmmProblem:
    """One observed problem: response y, fixed design x, random design z.

    Arrays are copied, cast to float64 and frozen, so instances are safe to
    share across concurrent workers.
    """

    y: NDArray
    x: NDArray
    z: NDArray
    groups: GroupStructure

    def __init__(self, y, x, z, groups: GroupStructure) -> None:
        object.__setattr__(self, "y", _readonly(np.asarray(y).ravel()))
        object.__setattr__(self, "x", _readonly(np.atleast_2d(x)))
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """Quadratic penalty specification for the random effects.

    Variants (``kind``):
      - ``identity``: u' u.
      - ``per_group_params``: sum_i params[i] * |u_i|^2 with the global
        multiplier lam_u pinned to 1 (each component carries its own
        penalization parameter).
      - ``per_group_weights``: lam_u * sum_i weights[i] * |u_i|^2 with
        preselected per-component weights.
      - ``full_matrix``: lam_u * u' W u for a fixed symmetric PSD W.

    Every variant maps to one effective q x q matrix via
    :func:`effective_weight_matrix`, so the solver has a single code path.
    """

    kind: str
    values: tuple[float, ...] = ()
    matrix: NDArray | None = None

    @staticmethod
    def identity() -> "WeightSpec":
        return WeightSpec(kind=IDENTITY)

    @staticmethod
    def per_group_params(params) -> "WeightSpec":
        return WeightSpec(kind=PER_GROUP_PARAMS, values=tuple(float(v) for v in params))

    @staticmethod
    def per_group_weights(weights) -> "WeightSpec":
        return WeightSpec(kind=PER_GROUP_WEIGHTS, values=tuple(float(v) for v in weights))

    @staticmethod
    def full_matrix(w) -> "WeightSpec":
        return WeightSpec(kind=FULL_MATRIX, matrix=_readonly(np.atleast_2d(w)))


@dataclass(frozen=True)
class SolverConfig:
    """Convergence knobs for the coordinate-descent solver.

    ``tol`` bounds the max absolute coordinate update over a full sweep;
    ``kkt_tol`` is the stationarity residual required of a returned fit.
    """

    tol: float = 1e-8
    max_iter: int = 100_000
    kkt_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """One solution of the penalized problem at a fixed (lam, lam_u).

    ``support`` holds exactly the indices of nonzero beta entries; the
    coordinate-descent updates produce exact zeros, no epsilon threshold is
    applied.  ``objective`` is recomputable from the stored vectors.
    """

    beta: NDArray
    u: NDArray
    support: tuple[int, ...]
    objective: float
    kkt_residual: float
    iterations: int
    lam: float
    lam_u: float
    converged: bool = True

    @property
    def support_set(self) -> frozenset[int]:
        return frozenset(self.support)


def validate(problem: LmmProblem, weights: WeightSpec) -> None:
    """Check all invariants of a problem/weights pair, raising on failure.

    Raises:
        DimensionMismatch: rows of x or z differ from len(y).
        GroupSumMismatch: group sizes do not sum to q, or a per-group
            weight list has the wrong length or a non-positive entry.
        NonPsdWeight: a full weight matrix is asymmetric or indefinite.
    """
    n = problem.y.shape[0]
    if problem.x.ndim != 2 or problem.x.shape[0] != n:
        raise DimensionMismatch(
            f"x has shape {problem.x.shape}, expected {n} rows to match y"
        )
    if problem.z.ndim != 2 or problem.z.shape[0] != n:
        raise DimensionMismatch(
            f"z has shape {problem.z.shape}, expected {n} rows to match y"
        )
    if problem.p < 1:
        raise DimensionMismatch("x must have at least one column")
    if problem.groups.total != problem.q:
        raise GroupSumMismatch(
            f"group sizes {problem.groups.sizes} sum to {problem.groups.total}, "
            f"but z has {problem.q} columns"
        )
    _validate_weights(weights, problem.groups)


def _validate_weights(weights: WeightSpec, groups: GroupStructure) -> None:
    if weights.kind in (PER_GROUP_PARAMS, PER_GROUP_WEIGHTS):
        if len(weights.values) != groups.count:
            raise GroupSumMismatch(
                f"{weights.kind} needs {groups.count} entries, got {len(weights.values)}"
            )
        if any(not v > 0 for v in weights.values):
            raise GroupSumMismatch(f"{weights.kind} entries must be positive")
    elif weights.kind == FULL_MATRIX:
        w = weights.matrix
        q = groups.total
        if w.shape != (q, q):
            raise GroupSumMismatch(f"weight matrix is {w.shape}, expected ({q}, {q})")
        if q == 0:
            return
        scale = max(1.0, float(np.abs(w).max()))
        if float(np.abs(w - w.T).max()) > SYM_PSD_RTOL * scale:
            raise NonPsdWeight("weight matrix is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (w + w.T))
        norm = float(np.abs(eigs).max()) if eigs.size else 0.0
        if eigs.size and eigs.min() < -SYM_PSD_RTOL * max(norm, 1.0):
            raise NonPsdWeight(
                f"weight matrix has negative eigenvalue {eigs.min():.3e}"
            )
    elif weights.kind != IDENTITY:
        raise NonPsdWeight(f"unknown weight kind {weights.kind!r}")


def effective_weight_matrix(weights: WeightSpec, groups: GroupStructure) -> NDArray:
    """Materialize the q x q penalty matrix W for any weight variant.

    Identity maps to I; per-group variants map to a block-diagonal matrix
    with a scalar multiple of I on each component block; full_matrix is
    returned as given (symmetrized copy).
    """
    _validate_weights(weights, groups)
    q = groups.total
    if weights.kind == IDENTITY:
        return np.eye(q)
    if weights.kind == FULL_MATRIX:
        w = np.array(weights.matrix, dtype=np.float64)
        return 0.5 * (w + w.T)
    diag = np.empty(q)
    for value, sl in zip(weights.values, groups.slices()):
        diag[sl] = value
    return np.diag(diag)


def objective_value(
    problem: LmmProblem,
    weights: WeightSpec,
    lam: float,
    lam_u: float,
    beta: NDArray,
    u: NDArray,
) -> float:
    """Evaluate |y - x beta - z u|^2 + lam |beta|_1 + lam_u * u' W u."""
    r = problem.y - problem.x @ beta - problem.z @ u
    w_eff = effective_weight_matrix(weights, problem.groups)
    return float(r @ r + lam * np.abs(beta).sum() + lam_u * (u @ (w_eff @ u)))
