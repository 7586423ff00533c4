"""Preselected penalty weights for the variance-component groups.

The default recipe sets w_i = (1 - t_i) / q_i per component, where q_i is
the component's column count and t_i the average absolute Pearson
correlation between its z columns and y.  Components whose columns track
y strongly (large effects) get a small weight, so their random effects are
shrunk less; the division by q_i adjusts for subvector dimension.

When the random-effect covariance D is known, the full weight matrix
W = D^{-1} is available instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .exceptions import NotPositiveDefinite, ZeroVarianceColumn
from .model import LmmProblem, WeightSpec

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class CorrelationSummary:
    """Average |corr(z column, y)| per variance component, each in [0, 1]."""

    theta_per_group: tuple[float, ...]


def correlation_summary(problem: LmmProblem) -> CorrelationSummary:
    """Compute the per-component average absolute correlation with y.

    Raises:
        ZeroVarianceColumn: y or some z column is constant, so a Pearson
            correlation is undefined.
    """
    y = problem.y
    yc = y - y.mean()
    y_ss = float(yc @ yc)
    if y_ss <= 0.0:
        raise ZeroVarianceColumn("y is constant; correlations are undefined")
    zc = problem.z - problem.z.mean(axis=0)
    z_ss = np.einsum("ij,ij->j", zc, zc)
    if np.any(z_ss <= 0.0):
        bad = int(np.flatnonzero(z_ss <= 0.0)[0])
        raise ZeroVarianceColumn(f"z column {bad} is constant")
    corr = np.abs(zc.T @ yc) / np.sqrt(z_ss * y_ss)
    corr = np.minimum(corr, 1.0)
    thetas = tuple(float(corr[sl].mean()) for sl in problem.groups.slices())
    return CorrelationSummary(theta_per_group=thetas)


def correlation_weights(problem: LmmProblem) -> WeightSpec:
    """Per-component weights w_i = max((1 - t_i) / q_i, 1e-6).

    The floor keeps a component with perfectly correlated columns
    (t_i = 1) from receiving a zero weight, which would make the ridge
    block singular on that component.
    """
    if problem.q < 1:
        raise ZeroVarianceColumn("weights need at least one z column")
    summary = correlation_summary(problem)
    ws = [
        max((1.0 - theta) / size, WEIGHT_FLOOR)
        for theta, size in zip(summary.theta_per_group, problem.groups.sizes)
    ]
    return WeightSpec.per_group_weights(ws)


def weights_from_covariance(d: NDArray) -> WeightSpec:
    """Full weight matrix W = d^{-1} for a known covariance d.

    Raises:
        NotPositiveDefinite: d is asymmetric beyond round-off or its
            smallest eigenvalue is at or below 1e-12 * |d|.
    """
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    if d.shape[0] != d.shape[1]:
        raise NotPositiveDefinite(f"covariance must be square, got {d.shape}")
    scale = max(1.0, float(np.abs(d).max()))
    if float(np.abs(d - d.T).max()) > 1e-10 * scale:
        raise NotPositiveDefinite("covariance is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (d + d.T))
    norm = float(np.abs(eigs).max())
    if eigs.min() <= 1e-12 * norm:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {eigs.min():.3e} fails the PD threshold"
        )
    inv = np.linalg.inv(d)
    return WeightSpec.full_matrix(0.5 * (inv + inv.T))
