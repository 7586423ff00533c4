"""Solver for min |y - x b - z u|^2 + lam |b|_1 + lam_u * u' W u.

For fixed b the u-block is an unpenalized ridge with closed form
u = (z'z + lam_u W)^{-1} z'(y - x b).  Substituting it back leaves
(y - x b)' M (y - x b) + lam |b|_1 with M = I - z (z'z + lam_u W)^{-1} z',
a plain lasso on the factored data (L x, L y) where L'L = M.  One
coordinate-descent loop therefore serves every weight variant.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from . import _cd
from .exceptions import LmmSelectError, SingularRidge
from .model import (
    FitResult,
    LmmProblem,
    SolverConfig,
    WeightSpec,
    effective_weight_matrix,
    validate,
)

# Widths above which the Gram-matrix kernel beats residual updates.
COVARIANCE_MIN_P = 5000

DEFAULT_N_LAMBDA = 50
DEFAULT_LAMBDA_MIN_RATIO = 1e-3


class ReducedProblem:
    """The u-eliminated lasso data for one (problem, weights, lam_u).

    Attributes:
        m_factor: L with L'L = M, from the symmetric eigendecomposition of
            M (negative round-off eigenvalues clamped to zero).
        x_tilde, y_tilde: factored design and response, L x and L y.
        ridge_solve: Cholesky factorization of z'z + lam_u W, used to
            recover u from a fitted beta.
    """

    def __init__(self, problem: LmmProblem, weights: WeightSpec, lam_u: float):
        self.problem = problem
        self.weights = weights
        self.lam_u = float(lam_u)
        self.w_eff = effective_weight_matrix(weights, problem.groups)

        n, q = problem.n, problem.q
        z = problem.z
        if q == 0:
            self.ridge_solve = None
            m = np.eye(n)
            self.x_tilde = np.array(problem.x)
            self.y_tilde = np.array(problem.y)
        else:
            a = z.T @ z + self.lam_u * self.w_eff
            try:
                self.ridge_solve = scipy.linalg.cho_factor(a)
            except scipy.linalg.LinAlgError as exc:
                raise SingularRidge(
                    f"z'z + lam_u*W is singular at lam_u={lam_u:g}"
                ) from exc
            m = np.eye(n) - z @ scipy.linalg.cho_solve(self.ridge_solve, z.T)
            m = 0.5 * (m + m.T)
            vals, vecs = np.linalg.eigh(m)
            vals = np.maximum(vals, 0.0)
            l_factor = np.sqrt(vals)[:, None] * vecs.T
            self.x_tilde = l_factor @ problem.x
            self.y_tilde = l_factor @ problem.y
            self.m_factor = l_factor
        if q == 0:
            self.m_factor = m

        self.col_norms = np.einsum("ij,ij->j", self.x_tilde, self.x_tilde)
        self.xty = self.x_tilde.T @ self.y_tilde
        self.lam_max = 2.0 * float(np.abs(self.xty).max()) if problem.p else 0.0
        self._xt = None
        self._gram = None
        # Lazy cache of Gram columns (x'x)[:, j]; the active sets of a
        # warm-started path revisit the same coordinates constantly.
        self._gram_col_index: dict[int, int] = {}
        self._gram_cols = np.empty((problem.p, 0))
        self._gram_used = 0

    @property
    def xt(self) -> NDArray:
        """Transposed factored design, row-contiguous for the CD kernel."""
        if self._xt is None:
            self._xt = np.ascontiguousarray(self.x_tilde.T)
        return self._xt

    @property
    def gram(self) -> NDArray:
        if self._gram is None:
            self._gram = np.ascontiguousarray(self.x_tilde.T @ self.x_tilde)
        return self._gram

    def _ensure_gram_columns(self, active: NDArray) -> list[int]:
        index = self._gram_col_index
        missing = [j for j in active.tolist() if j not in index]
        if missing:
            needed = self._gram_used + len(missing)
            if needed > self._gram_cols.shape[1]:
                grown = np.empty((self.problem.p, max(2 * needed, 64)))
                grown[:, : self._gram_used] = self._gram_cols[:, : self._gram_used]
                self._gram_cols = grown
            new_cols = self.x_tilde.T @ self.x_tilde[:, missing]
            self._gram_cols[:, self._gram_used : needed] = new_cols
            for offset, j in enumerate(missing):
                index[j] = self._gram_used + offset
            self._gram_used = needed
        return [index[j] for j in active.tolist()]

    def gram_block(self, active: NDArray) -> NDArray:
        """(x'x)[active, active] assembled from cached Gram columns."""
        if self._gram is not None:
            return self._gram[np.ix_(active, active)]
        cols = self._ensure_gram_columns(active)
        return self._gram_cols[np.ix_(active, cols)]

    def gram_rows(self, active: NDArray) -> NDArray:
        """(x'x)[:, active] from the cache (p x |active|)."""
        if self._gram is not None:
            return self._gram[:, active]
        cols = self._ensure_gram_columns(active)
        return self._gram_cols[:, cols]

    def recover_u(self, beta: NDArray) -> NDArray:
        """Closed-form ridge solution for u given beta."""
        if self.problem.q == 0:
            return np.zeros(0)
        rhs = self.problem.z.T @ (self.problem.y - self.problem.x @ beta)
        return scipy.linalg.cho_solve(self.ridge_solve, rhs)


@dataclass(frozen=True, eq=False)
class PathResult:
    """Fits over a (lam, lam_u) grid.

    ``grid[i]`` is the (lam, lam_u) pair of ``fits[i]``.  Grid points whose
    solve raised are excluded from ``grid``/``fits`` and recorded in
    ``failures`` as (lam, lam_u, message).
    """

    grid: tuple[tuple[float, float], ...]
    fits: tuple[FitResult, ...]
    lambda_max_per_capital_lambda: dict[float, float]
    failures: tuple[tuple[float, float, str], ...] = ()

    def supports(self) -> list[frozenset[int]]:
        return [f.support_set for f in self.fits]


def reduce_problem(
    problem: LmmProblem, weights: WeightSpec, lam_u: float
) -> ReducedProblem:
    """Eliminate u analytically; raises SingularRidge if the ridge block
    z'z + lam_u W cannot be factored."""
    validate(problem, weights)
    return ReducedProblem(problem, weights, lam_u)


def kkt_residual(
    problem: LmmProblem,
    weights: WeightSpec,
    lam: float,
    lam_u: float,
    beta: NDArray,
    u: NDArray,
    w_eff: NDArray | None = None,
) -> float:
    """Stationarity residual of (beta, u); zero iff the pair is optimal.

    Max over |2 x_j' r - lam*sign(beta_j)| on the active set,
    max(0, |2 x_j' r| - lam) off it, and the max-norm of
    2 z' r - 2 lam_u W u, where r = y - x beta - z u.
    """
    if w_eff is None:
        w_eff = effective_weight_matrix(weights, problem.groups)
    r = problem.y - problem.x @ beta - problem.z @ u
    g = 2.0 * (problem.x.T @ r)
    res = 0.0
    nz = beta != 0.0
    if nz.any():
        res = float(np.abs(g[nz] - lam * np.sign(beta[nz])).max())
    if (~nz).any():
        res = max(res, float(max(0.0, np.abs(g[~nz]).max() - lam)))
    if problem.q:
        u_grad = 2.0 * (problem.z.T @ r) - 2.0 * lam_u * (w_eff @ u)
        res = max(res, float(np.abs(u_grad).max()))
    return res


def lambda_max(
    problem: LmmProblem,
    weights: WeightSpec,
    capital_lambda: float,
    reduced: ReducedProblem | None = None,
) -> float:
    """Smallest l1 penalty that forces beta = 0: 2 |x' M y|_inf.

    Computed from the same factored data the solver uses, so solving at
    exactly this value yields an exactly empty support.
    """
    if reduced is None:
        reduced = reduce_problem(problem, weights, capital_lambda)
    return reduced.lam_max


def solve(
    problem: LmmProblem,
    weights: WeightSpec,
    lam: float,
    capital_lambda: float,
    config: SolverConfig | None = None,
    *,
    beta0: NDArray | None = None,
    reduced: ReducedProblem | None = None,
    strategy: str = "auto",
) -> FitResult:
    """Solve the penalized problem at one (lam, capital_lambda) point.

    Args:
        problem: validated data.
        weights: penalty variant for the random effects.
        lam: l1 penalty on beta, must be positive.
        capital_lambda: multiplier of the quadratic u penalty, must be
            positive (the pure projection route handles the lam_u -> 0
            limit, see the transforms module).
        config: convergence thresholds; defaults to SolverConfig().
        beta0: optional warm start.
        reduced: reuse a precomputed elimination (skips validation).
        strategy: "auto", "residual" or "gram" kernel selection.

    Returns:
        FitResult with exact-zero support; ``converged`` is False when the
        iteration budget ran out above the KKT tolerance (the best iterate
        is still returned rather than raised, so diagnostics can inspect
        near-solutions).
    """
    if config is None:
        config = SolverConfig()
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not capital_lambda > 0:
        raise ValueError("capital_lambda must be positive")
    if reduced is None:
        reduced = reduce_problem(problem, weights, capital_lambda)

    p = problem.p
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)

    if lam >= reduced.lam_max and beta0 is None:
        # beta = 0 satisfies the KKT system by construction of lam_max.
        beta = np.zeros(p)
        iterations = 0
    else:
        # Coordinate descent finds a starting active set on cold calls;
        # the exact active-set solve then lands stationarity at machine
        # precision, which plain CD only reaches slowly on correlated
        # designs.  Warm starts from a neighboring penalty already carry
        # the right set, so they go straight to the polish.  The
        # reduced-problem residual equals the full-problem one up to
        # round-off (u is recovered in closed form), so it can steer the
        # loop; the recorded kkt_residual is the full recomputation on
        # the original matrices.
        iterations = 0
        if beta0 is None:
            iterations, _ = _descend(reduced, beta, lam, config, strategy, sweep_cap=10)
        reduced_kkt = _active_set_polish(reduced, beta, lam)
        tol = config.tol
        while (
            reduced_kkt > 0.5 * config.kkt_tol
            and iterations < config.max_iter
            and tol > 1e-15
        ):
            extra, _ = _descend(
                reduced, beta, lam, config, strategy, sweep_cap=100, tol=tol
            )
            iterations += extra
            reduced_kkt = _active_set_polish(reduced, beta, lam)
            tol /= 10.0

    u = reduced.recover_u(beta)
    kkt = kkt_residual(
        problem, weights, lam, capital_lambda, beta, u, w_eff=reduced.w_eff
    )
    converged = kkt <= config.kkt_tol

    r = problem.y - problem.x @ beta - problem.z @ u
    objective = float(
        r @ r + lam * np.abs(beta).sum() + capital_lambda * (u @ (reduced.w_eff @ u))
    )
    return FitResult(
        beta=beta,
        u=u,
        support=tuple(int(j) for j in np.flatnonzero(beta)),
        objective=objective,
        kkt_residual=kkt,
        iterations=iterations,
        lam=float(lam),
        lam_u=float(capital_lambda),
        converged=converged,
    )


def _descend(
    reduced: ReducedProblem,
    beta: NDArray,
    lam: float,
    config: SolverConfig,
    strategy: str,
    sweep_cap: int | None = None,
    tol: float | None = None,
) -> tuple[int, bool]:
    sweeps = config.max_iter if sweep_cap is None else min(config.max_iter, sweep_cap)
    tol = config.tol if tol is None else tol
    if strategy == "auto":
        strategy = "gram" if beta.shape[0] > COVARIANCE_MIN_P else "residual"
    if strategy == "gram":
        return _cd.cd_gram(reduced.gram, reduced.xty, beta, lam, tol, sweeps)
    if strategy == "residual":
        return _cd.cd_residual(
            reduced.xt, reduced.y_tilde, beta, reduced.col_norms, lam, tol, sweeps
        )
    raise ValueError(f"unknown strategy {strategy!r}")


def _solve_active_system(gram: NDArray, rhs: NDArray) -> NDArray | None:
    """Solve gram @ t = rhs stably.

    Cholesky plus one refinement step handles the well-conditioned case;
    a lightly ridge-regularized Cholesky with extra refinement sweeps
    covers the near-singular Grams that appear when the active set
    approaches the sample size."""
    scale = max(1.0, float(np.abs(rhs).max()))
    try:
        cho = scipy.linalg.cho_factor(gram, check_finite=False)
        t = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
        t += scipy.linalg.cho_solve(cho, rhs - gram @ t, check_finite=False)
        if np.all(np.isfinite(t)) and float(np.abs(rhs - gram @ t).max()) <= 1e-9 * scale:
            return t
    except scipy.linalg.LinAlgError:
        pass
    shift = 1e-10 * max(float(np.trace(gram)) / max(gram.shape[0], 1), 1.0)
    shifted = gram + shift * np.eye(gram.shape[0])
    try:
        cho = scipy.linalg.cho_factor(shifted, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None
    t = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
    for _ in range(3):
        t += scipy.linalg.cho_solve(cho, rhs - gram @ t, check_finite=False)
    if not np.all(np.isfinite(t)):
        return None
    return t


def _active_set_polish(
    reduced: ReducedProblem, beta: NDArray, lam: float, max_rounds: int = 80
) -> float:
    """Solve the stationarity system exactly on the current active set.

    Feature-sign iteration: solve the equality KKT system restricted to
    the active coordinates, line-search toward that solution dropping
    coordinates that cross zero, and admit batches of inactive
    coordinates violating the |2 x'r| <= lam condition until none
    remains.  Modifies beta in place and returns the reduced-problem KKT
    residual it achieved (inf when the iteration gave up; the caller then
    falls back to coordinate descent).
    """
    xty = reduced.xty
    active = np.flatnonzero(beta).astype(np.intp)
    signs = np.sign(beta[active])
    slack = 1e-13 * max(reduced.lam_max, 1.0)

    for _ in range(max_rounds):
        # Inner loop: exact solve on the active set; on sign disagreement
        # step along the segment to the solve target only as far as the
        # first zero crossing and drop the coordinates that cross, which
        # keeps the objective decreasing and guarantees termination.
        active_resid = 0.0
        for _ in range(active.size + 2):
            if active.size == 0:
                break
            gram = 2.0 * reduced.gram_block(active)
            rhs = 2.0 * xty[active] - lam * signs
            target = _solve_active_system(gram, rhs)
            if target is None:
                return math.inf
            consistent = np.sign(target) == signs
            if consistent.all():
                beta[active] = target
                active_resid = float(np.abs(gram @ target - rhs).max())
                break
            current = beta[active]
            # Coordinates already at negligible magnitude that want to
            # flip are simply dying between grid points; drop them in one
            # go (set membership only, values come from the next solve).
            scale = max(1.0, float(np.abs(current).max()))
            negligible = ~consistent & (np.abs(current) <= 1e-11 * scale)
            if negligible.any():
                beta[active[negligible]] = 0.0
                keep = ~negligible
                active, signs = active[keep], signs[keep]
                continue
            moves = target - current
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(~consistent, -current / moves, np.inf)
            steps[~np.isfinite(steps)] = np.inf
            t = float(steps.min())
            if not 0.0 <= t <= 1.0:
                return math.inf
            updated = current + t * moves
            crossed = steps <= t
            updated[crossed] = 0.0
            beta[active] = updated
            active = active[~crossed]
            signs = signs[~crossed]
        # Outer check: admit inactive coordinates violating |2 x'r| <= lam.
        if active.size:
            grad = xty - reduced.gram_rows(active) @ beta[active]
        else:
            grad = xty.copy()
        over = 2.0 * np.abs(grad) - (lam + slack)
        if active.size:
            over[active] = -np.inf
        violators = np.flatnonzero(over > 0.0)
        if violators.size == 0:
            inactive_resid = max(0.0, float(over.max()) + slack)
            return max(active_resid, inactive_resid)
        batch = max(16, active.size // 2)
        if violators.size > batch:
            order = np.argsort(over[violators])[::-1]
            violators = violators[order[:batch]]
        active = np.concatenate([active, violators])
        signs = np.concatenate([signs, np.sign(grad[violators])])
    return math.inf


def default_lambda_grid(
    lam_max: float,
    n_lambda: int = DEFAULT_N_LAMBDA,
    min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO,
) -> NDArray:
    """Log-spaced descending l1 grid from lam_max down to lam_max*min_ratio."""
    if lam_max <= 0:
        return np.array([1.0])
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def default_capital_lambda_grid(n: int = 10) -> NDArray:
    """Log-spaced u-penalty grid over [1e-2, 1e2]."""
    return np.geomspace(1e-2, 1e2, n)


def solve_path(
    problem: LmmProblem,
    weights: WeightSpec,
    lambda_grid=None,
    capital_lambda_grid=None,
    config: SolverConfig | None = None,
    *,
    strategy: str = "auto",
    n_lambda: int = DEFAULT_N_LAMBDA,
    lambda_min_ratio: float = DEFAULT_LAMBDA_MIN_RATIO,
    jobs: int = 1,
) -> PathResult:
    """Sweep a (lam, lam_u) grid, warm-starting lam within each lam_u.

    ``lambda_grid=None`` derives a per-column default grid from that
    column's lam_max.  An explicit grid must be positive and sorted
    descending.  Columns are independent warm-start chains and may be
    evaluated concurrently (``jobs``); results do not depend on scheduling.
    """
    if config is None:
        config = SolverConfig()
    validate(problem, weights)
    if capital_lambda_grid is None:
        capital_lambda_grid = default_capital_lambda_grid()
    cap_grid = [float(v) for v in capital_lambda_grid]
    if not cap_grid or any(not v > 0 for v in cap_grid):
        raise ValueError("capital_lambda_grid must be nonempty and positive")
    if lambda_grid is not None:
        lam_grid = [float(v) for v in lambda_grid]
        if not lam_grid or any(not v > 0 for v in lam_grid):
            raise ValueError("lambda_grid must be nonempty and positive")
        if any(a < b for a, b in zip(lam_grid, lam_grid[1:])):
            raise ValueError("lambda_grid must be sorted descending")
    else:
        lam_grid = None

    def run_column(lam_u: float):
        grid, fits, failures = [], [], []
        try:
            reduced = ReducedProblem(problem, weights, lam_u)
        except LmmSelectError as exc:
            lams = lam_grid if lam_grid is not None else [math.nan]
            for lam in lams:
                failures.append((lam, lam_u, str(exc)))
            return grid, fits, failures, None
        lams = (
            lam_grid
            if lam_grid is not None
            else list(default_lambda_grid(reduced.lam_max, n_lambda, lambda_min_ratio))
        )
        beta = None
        for lam in lams:
            try:
                fit = solve(
                    problem,
                    weights,
                    lam,
                    lam_u,
                    config,
                    beta0=beta,
                    reduced=reduced,
                    strategy=strategy,
                )
            except LmmSelectError as exc:
                failures.append((lam, lam_u, str(exc)))
                continue
            beta = fit.beta
            grid.append((lam, lam_u))
            fits.append(fit)
        return grid, fits, failures, reduced.lam_max

    # BLAS thread pools lose badly on the many small factorizations a
    # path produces; paths are parallelized over columns/replicates
    # instead, so pin BLAS to one thread for the sweep.
    limits = (
        threadpool_limits(limits=1) if threadpool_limits is not None else nullcontext()
    )
    with limits:
        if jobs > 1 and len(cap_grid) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                columns = list(pool.map(run_column, cap_grid))
        else:
            columns = [run_column(lu) for lu in cap_grid]

    grid: list[tuple[float, float]] = []
    fits: list[FitResult] = []
    failures: list[tuple[float, float, str]] = []
    lam_max_map: dict[float, float] = {}
    for lam_u, (g, f, fail, lm) in zip(cap_grid, columns):
        grid.extend(g)
        fits.extend(f)
        failures.extend(fail)
        if lm is not None:
            lam_max_map[lam_u] = lm
    return PathResult(
        grid=tuple(grid),
        fits=tuple(fits),
        lambda_max_per_capital_lambda=lam_max_map,
        failures=tuple(failures),
    )
