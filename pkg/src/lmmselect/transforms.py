"""Data transforms that turn the mixed model into a plain lasso problem.

Two routes:

* ``project_out``: multiply by the annihilator P = I - z z^+ so the random
  design is removed entirely; lasso on the projected data is the cheap
  "treat group effects as nuisance" method.
* ``rotate_to_isotropic``: the one-variance-component baseline.  Estimate
  the variance ratio gamma = sigma_g^2 / sigma^2 by maximum likelihood
  under the null model (no fixed effects), then rotate by
  (gamma K + I)^{-1/2} U' where K = z z'/q = U diag(ev) U', which makes
  the model covariance isotropic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .exceptions import DegenerateProjection
from .model import LmmProblem

GAMMA_LO = 1e-5
GAMMA_HI = 1e5
GOLDEN_ITERATIONS = 60


@dataclass(frozen=True, eq=False)
class ProjectedProblem:
    """Data multiplied by the annihilator of the random design."""

    x_tilde: NDArray
    y_tilde: NDArray
    projector_rank: int
    projector: NDArray


@dataclass(frozen=True, eq=False)
class RotatedProblem:
    """Data rotated so the fitted null-model covariance is isotropic.

    ``eigvals``/``eigvecs`` are the spectral pair of K = z z'/q;
    ``gamma_hat`` is the fitted variance ratio and ``sigma2_hat`` the
    profiled noise variance.  ``gamma_at_boundary`` flags a fit pinned to
    an end of the search interval.
    """

    x_tilde: NDArray
    y_tilde: NDArray
    gamma_hat: float
    sigma2_hat: float
    eigvals: NDArray
    eigvecs: NDArray
    gamma_at_boundary: bool


def pseudoinverse(z: NDArray) -> NDArray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below max(n, q) * s_max * machine-epsilon are treated
    as zero, so exactly rank-deficient designs invert deterministically.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.size == 0 or not np.any(z):
        return np.zeros(z.shape[::-1])
    return np.linalg.pinv(z, rcond=max(z.shape) * np.finfo(np.float64).eps)


def project_out(problem: LmmProblem) -> ProjectedProblem:
    """Annihilate the random design: returns ((I - z z^+) x, (I - z z^+) y).

    Raises:
        DegenerateProjection: z has full row rank, so the projector is zero
            and no data survives.
    """
    if problem.q < 1:
        raise DegenerateProjection("projection needs at least one z column")
    n = problem.n
    zplus = pseudoinverse(problem.z)
    projector = np.eye(n) - problem.z @ zplus
    rank_z = int(np.linalg.matrix_rank(problem.z))
    if rank_z >= n:
        raise DegenerateProjection(
            f"z has rank {rank_z} = n; projected data would be identically zero"
        )
    return ProjectedProblem(
        x_tilde=projector @ problem.x,
        y_tilde=projector @ problem.y,
        projector_rank=n - rank_z,
        projector=projector,
    )


def _profiled_nll(log_gamma: float, eigvals: NDArray, y_rot_sq: NDArray) -> float:
    """Negative null-model log-likelihood with sigma^2 profiled out."""
    gamma = math.exp(log_gamma)
    denom = gamma * eigvals + 1.0
    sigma2 = float(np.mean(y_rot_sq / denom))
    if sigma2 <= 0.0:
        return math.inf
    n = y_rot_sq.shape[0]
    return n * math.log(sigma2) + float(np.log(denom).sum())


def _golden_section(f, lo: float, hi: float, iterations: int) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iterations):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def rotate_to_isotropic(problem: LmmProblem) -> RotatedProblem:
    """Fit gamma by null-model ML and rotate the data accordingly.

    The search maximizes the profiled Gaussian likelihood of y with
    covariance sigma^2 (gamma K + I) over log gamma in
    [log 1e-5, log 1e5] by golden section (60 iterations).
    """
    if problem.q < 1:
        raise DegenerateProjection("rotation needs at least one z column")
    if problem.n < 2:
        raise DegenerateProjection("rotation needs at least two observations")
    k = (problem.z @ problem.z.T) / problem.q
    eigvals, eigvecs = np.linalg.eigh(k)
    eigvals = np.maximum(eigvals, 0.0)
    y_rot = eigvecs.T @ problem.y
    y_rot_sq = y_rot**2

    nll = lambda t: _profiled_nll(t, eigvals, y_rot_sq)
    t_hat = _golden_section(nll, math.log(GAMMA_LO), math.log(GAMMA_HI), GOLDEN_ITERATIONS)
    # A boundary optimum leaves the golden bracket pinned near an endpoint.
    for t_edge in (math.log(GAMMA_LO), math.log(GAMMA_HI)):
        if nll(t_edge) <= nll(t_hat):
            t_hat = t_edge
    gamma = math.exp(t_hat)
    at_boundary = (
        t_hat <= math.log(GAMMA_LO) + 1e-6 or t_hat >= math.log(GAMMA_HI) - 1e-6
    )

    denom = gamma * eigvals + 1.0
    sigma2 = float(np.mean(y_rot_sq / denom))
    scale = denom**-0.5
    return RotatedProblem(
        x_tilde=scale[:, None] * (eigvecs.T @ problem.x),
        y_tilde=scale * y_rot,
        gamma_hat=float(gamma),
        sigma2_hat=sigma2,
        eigvals=eigvals,
        eigvecs=eigvecs,
        gamma_at_boundary=at_boundary,
    )
