"""Two-step route for random designs wider than the sample (q > n).

Step one compresses each variance-component block of z to its leading
principal-component scores, keeping the smallest count that explains at
least ``threshold`` of the block's (column-centered) variance.  The
compressed effects are linear images of Gaussian effects, hence still
Gaussian, so step two runs the usual weighted-penalty path solver on the
reduced problem.  beta indexing is untouched: only z changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .model import GroupStructure, LmmProblem, SolverConfig
from .solver import PathResult, solve_path
from .weights import correlation_weights

DEFAULT_THRESHOLD = 0.95


@dataclass(frozen=True, eq=False)
class ReducedRandomDesign:
    """Per-component PCA compression of the random design.

    ``loadings[i]`` is the (q_i, k_i) matrix of principal directions of
    component i, ``column_means[i]`` the centering offsets, ``explained[i]``
    the cumulative explained-variance fraction actually achieved, and
    ``new_group_sizes`` the per-component score counts (k_i).
    """

    z_reduced: NDArray
    loadings: tuple[NDArray, ...]
    column_means: tuple[NDArray, ...]
    explained: tuple[float, ...]
    new_group_sizes: tuple[int, ...]

    @property
    def q_reduced(self) -> int:
        return sum(self.new_group_sizes)


def pca_reduce(
    problem: LmmProblem, threshold: float = DEFAULT_THRESHOLD
) -> tuple[LmmProblem, ReducedRandomDesign]:
    """Compress each z block to scores explaining >= threshold variance.

    Returns the problem rebuilt around the reduced z (same y and x) plus
    the reduction itself.  At least one component is always kept per
    block; a block with zero centered variance keeps a single zero score.
    """
    if problem.q < 1:
        raise ValueError("reduction needs at least one z column")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")

    scores_blocks: list[NDArray] = []
    loadings: list[NDArray] = []
    means: list[NDArray] = []
    explained: list[float] = []
    sizes: list[int] = []
    for sl in problem.groups.slices():
        block = problem.z[:, sl]
        mu = block.mean(axis=0)
        centered = block - mu
        u_mat, svals, vt = np.linalg.svd(centered, full_matrices=False)
        ev = svals**2
        total = float(ev.sum())
        if total <= 0.0:
            k, frac = 1, 1.0
        else:
            cum = np.cumsum(ev) / total
            k = int(np.searchsorted(cum, threshold - 1e-12) + 1)
            k = min(k, len(svals))
            frac = float(cum[k - 1])
        assert k >= 1
        scores_blocks.append(u_mat[:, :k] * svals[:k])
        loadings.append(vt[:k].T.copy())
        means.append(mu)
        explained.append(frac)
        sizes.append(k)

    design = ReducedRandomDesign(
        z_reduced=np.hstack(scores_blocks),
        loadings=tuple(loadings),
        column_means=tuple(means),
        explained=tuple(explained),
        new_group_sizes=tuple(sizes),
    )
    reduced_problem = LmmProblem(
        y=problem.y,
        x=problem.x,
        z=design.z_reduced,
        groups=GroupStructure(sizes),
    )
    return reduced_problem, design


def select_with_reduction(
    problem: LmmProblem,
    threshold: float = DEFAULT_THRESHOLD,
    lambda_grid=None,
    capital_lambda_grid=None,
    config: SolverConfig | None = None,
    *,
    jobs: int = 1,
) -> PathResult:
    """pca_reduce, then the weighted-penalty path on the reduced problem."""
    reduced_problem, _ = pca_reduce(problem, threshold)
    weights = correlation_weights(reduced_problem)
    return solve_path(
        reduced_problem,
        weights,
        lambda_grid=lambda_grid,
        capital_lambda_grid=capital_lambda_grid,
        config=config,
        jobs=jobs,
    )
