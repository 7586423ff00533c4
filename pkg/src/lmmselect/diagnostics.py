"""Support-recovery diagnostics for the penalized mixed model.

The selection analysis partitions the scaled Gram matrix
S = (1/n) [x, z]' [x, z] by (true support, its complement, z) and builds

    psi   = [[S_11, S_13], [S_31, S_33 + (lam_u/n) I]]
    delta = [S_21, S_23]
    theta = (sign(beta0 on the support), 0_q)

The scalar |delta psi^{-1} theta|_inf is the irrepresentable value: exact
sign recovery needs it below 1, with the margin 1 - value playing the role
of the usual eta.  The empirical counterpart sweeps a penalty grid over
replicated scenario draws and reports the fraction where some grid point
matches the true sign vector exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .exceptions import LmmSelectError, SingularPsi
from .model import LmmProblem, SolverConfig, WeightSpec
from .simulate import ScenarioSpec, generate, with_n
from .solver import solve_path

PSI_CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ConsistencyBlocks:
    """The partitioned Gram blocks for one problem and support."""

    sigma: NDArray
    psi: NDArray
    delta: NDArray
    theta_sign: NDArray
    support: tuple[int, ...]
    psi_condition: float


def assemble_blocks(
    problem: LmmProblem,
    true_support,
    capital_lambda: float,
    true_signs: NDArray | None = None,
) -> ConsistencyBlocks:
    """Partition (1/n)[x,z]'[x,z] by the true support and attach theta.

    Args:
        problem: the data.
        true_support: zero-based indices of the truly relevant x columns.
        capital_lambda: u-penalty multiplier entering psi's ridge block.
        true_signs: signs of the true effects on the support; defaults to
            all +1 (the generators use a constant positive effect).

    Raises:
        SingularPsi: psi's condition number exceeds 1e12.
    """
    support = sorted(int(j) for j in set(true_support))
    if not support:
        raise ValueError("true_support must be nonempty")
    if support[0] < 0 or support[-1] >= problem.p:
        raise ValueError("true_support indices out of range")
    k = len(support)
    n, p, q = problem.n, problem.p, problem.q

    design = np.hstack([problem.x, problem.z]) if q else np.array(problem.x)
    sigma = (design.T @ design) / n

    rest = np.setdiff1d(np.arange(p), support)
    idx1 = np.asarray(support, dtype=int)
    idx3 = np.arange(p, p + q)

    psi = np.empty((k + q, k + q))
    psi[:k, :k] = sigma[np.ix_(idx1, idx1)]
    psi[:k, k:] = sigma[np.ix_(idx1, idx3)]
    psi[k:, :k] = sigma[np.ix_(idx3, idx1)]
    psi[k:, k:] = sigma[np.ix_(idx3, idx3)] + (capital_lambda / n) * np.eye(q)

    delta = np.hstack(
        [sigma[np.ix_(rest, idx1)], sigma[np.ix_(rest, idx3)]]
    ) if rest.size else np.zeros((0, k + q))

    if true_signs is None:
        signs = np.ones(k)
    else:
        signs = np.sign(np.asarray(true_signs, dtype=np.float64)).ravel()
        if signs.shape[0] != k:
            raise ValueError("true_signs must have one entry per support index")
    theta_sign = np.concatenate([signs, np.zeros(q)])

    condition = float(np.linalg.cond(psi))
    if not np.isfinite(condition) or condition > PSI_CONDITION_LIMIT:
        raise SingularPsi(f"psi condition number {condition:.3e} exceeds 1e12")
    return ConsistencyBlocks(
        sigma=sigma,
        psi=psi,
        delta=delta,
        theta_sign=theta_sign,
        support=tuple(support),
        psi_condition=condition,
    )


def irrepresentable_value(blocks: ConsistencyBlocks) -> float:
    """|delta psi^{-1} theta|_inf; below 1 - eta means the condition holds."""
    if blocks.delta.shape[0] == 0:
        return 0.0
    try:
        solved = np.linalg.solve(blocks.psi, blocks.theta_sign)
    except np.linalg.LinAlgError as exc:
        raise SingularPsi("psi is numerically singular") from exc
    return float(np.abs(blocks.delta @ solved).max())


@dataclass(frozen=True)
class CurvePoint:
    """One row of an empirical sign-consistency curve."""

    n: int
    replicates: int
    successes: int
    rate: float
    failures: int = 0


def _signs_match(beta_hat: NDArray, true_beta: NDArray) -> bool:
    return bool(np.array_equal(np.sign(beta_hat), np.sign(true_beta)))


def sign_consistency_curve(
    spec: ScenarioSpec,
    n_list,
    replicates: int,
    weights: WeightSpec | None = None,
    lambda_grid=None,
    capital_lambda_grid=None,
    config: SolverConfig | None = None,
    *,
    n_lambda: int = 50,
    jobs: int = 1,
) -> list[CurvePoint]:
    """Exact-sign recovery rate of the path solver as n grows.

    For each n, ``replicates`` instances are drawn (per-replicate derived
    seeds, so the run is deterministic under the spec's master seed and
    any schedule) and a replicate counts as a success when some grid
    point's fit matches sign(beta0) exactly, zeros included.  Replicates
    whose generation or solve raises are counted in ``failures`` and score
    as non-successes.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if weights is None:
        weights = WeightSpec.identity()

    def run_one(args) -> tuple[int, bool, bool]:
        n, rep = args
        try:
            inst = generate(with_n(spec, n), replicate=rep)
            path = solve_path(
                inst.problem,
                weights,
                lambda_grid=lambda_grid,
                capital_lambda_grid=capital_lambda_grid,
                config=config,
                n_lambda=n_lambda,
            )
        except LmmSelectError:
            return n, False, True
        hit = any(_signs_match(fit.beta, inst.true_beta) for fit in path.fits)
        return n, hit, False

    tasks = [(int(n), rep) for n in n_list for rep in range(replicates)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_one, tasks))
    else:
        outcomes = [run_one(t) for t in tasks]

    points = []
    for n in (int(v) for v in n_list):
        hits = sum(1 for m, ok, _ in outcomes if m == n and ok)
        fails = sum(1 for m, _, failed in outcomes if m == n and failed)
        points.append(
            CurvePoint(
                n=n,
                replicates=replicates,
                successes=hits,
                rate=hits / replicates,
                failures=fails,
            )
        )
    return points
