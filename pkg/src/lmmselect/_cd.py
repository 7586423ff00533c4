"""Coordinate-descent inner loops for the l1-penalized reduced problem.

Both kernels minimize |y - x beta|^2 + lam * |beta|_1 for a fixed design.
``cd_residual`` keeps the residual vector updated (cost O(n) per visited
coordinate) and suits moderate p; ``cd_gram`` works from the Gram matrix
x'x and the vector x'y (cost O(p) per *changed* coordinate) and pays off
for very wide designs where the Gram matrix is reused across many lam
values.  Updates use exact soft-thresholding, so zeros are exact.

Sweeps alternate between full passes and passes restricted to the current
active set, glmnet style.  The iteration count returned is the total
number of passes of either kind.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True, nogil=True)
def _pass_residual(xt, r, beta, col_norms, thresh, active_only):
    """One coordinate pass; returns the max absolute coefficient change."""
    p = beta.shape[0]
    n = r.shape[0]
    max_delta = 0.0
    for j in range(p):
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        cn = col_norms[j]
        if cn <= 0.0:
            new = 0.0
        else:
            g = 0.0
            for i in range(n):
                g += xt[j, i] * r[i]
            zval = g + cn * bj
            az = abs(zval) - thresh
            if az > 0.0:
                new = az / cn if zval > 0.0 else -az / cn
            else:
                new = 0.0
        d = new - bj
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= d * xt[j, i]
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@njit(cache=True, nogil=True)
def cd_residual(xt, y, beta, col_norms, lam, tol, max_sweeps):
    """Run residual-updating coordinate descent until converged.

    Args:
        xt: design transposed, shape (p, n), C-contiguous.
        y: response, shape (n,).
        beta: warm-start coefficients, modified in place.
        col_norms: squared column norms of the design.
        lam: l1 penalty.
        tol: stop when a full pass moves no coefficient by more than tol.
        max_sweeps: pass budget.

    Returns:
        (sweeps_used, converged)
    """
    n = y.shape[0]
    p = beta.shape[0]
    r = y.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= beta[j] * xt[j, i]
    thresh = 0.5 * lam
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _pass_residual(xt, r, beta, col_norms, thresh, False)
        sweeps += 1
        if delta < tol:
            return sweeps, True
        while sweeps < max_sweeps:
            delta = _pass_residual(xt, r, beta, col_norms, thresh, True)
            sweeps += 1
            if delta < tol:
                break
    return sweeps, False


@njit(cache=True, nogil=True)
def _pass_gram(gram, xty, theta, beta, thresh, active_only):
    p = beta.shape[0]
    max_delta = 0.0
    for j in range(p):
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        cn = gram[j, j]
        if cn <= 0.0:
            new = 0.0
        else:
            zval = xty[j] - theta[j] + cn * bj
            az = abs(zval) - thresh
            if az > 0.0:
                new = az / cn if zval > 0.0 else -az / cn
            else:
                new = 0.0
        d = new - bj
        if d != 0.0:
            beta[j] = new
            for k in range(p):
                theta[k] += d * gram[j, k]
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@njit(cache=True, nogil=True)
def cd_gram(gram, xty, beta, lam, tol, max_sweeps):
    """Gram-matrix coordinate descent; same contract as :func:`cd_residual`."""
    p = beta.shape[0]
    theta = gram @ beta if p else np.zeros(0)
    thresh = 0.5 * lam
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _pass_gram(gram, xty, theta, beta, thresh, False)
        sweeps += 1
        if delta < tol:
            return sweeps, True
        while sweeps < max_sweeps:
            delta = _pass_gram(gram, xty, theta, beta, thresh, True)
            sweeps += 1
            if delta < tol:
                break
    return sweeps, False
