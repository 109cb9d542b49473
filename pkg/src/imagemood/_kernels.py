"""Compiled coordinate-descent sweeps. Each call performs one full cyclic
pass and updates the weights and residuals in place."""

import numpy as np
from numba import njit


@njit(cache=True)
def enet_sweep(X, r, w, colsq, l1, l2):
    """One pass of soft-threshold updates for
    ``1/(2n)||y - Xw||^2 + l1 ||w||_1 + l2/2 ||w||^2``.

    ``r`` holds ``y - Xw``; ``colsq[j] = x_j.x_j / n``. Returns the largest
    absolute coefficient change.
    """
    n, p = X.shape
    max_change = 0.0
    for j in range(p):
        if colsq[j] == 0.0:
            continue
        old = w[j]
        z = 0.0
        for i in range(n):
            z += X[i, j] * r[i]
        z = z / n + colsq[j] * old
        if z > l1:
            new = (z - l1) / (colsq[j] + l2)
        elif z < -l1:
            new = (z + l1) / (colsq[j] + l2)
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * d
            w[j] = new
            if abs(d) > max_change:
                max_change = abs(d)
    return max_change


@njit(cache=True)
def group_sweep(X, R, W, colsq, l1, l2):
    """One pass of block updates for
    ``1/(2n)||Y - XW||_F^2 + l1 sum_j ||W_j.||_2 + l2/2 ||W||_F^2``.

    Row ``j`` is set to zero when the norm of its partial-residual
    correlation is at most ``l1`` and shrunk radially otherwise.
    """
    n, p = X.shape
    T = R.shape[1]
    z = np.empty(T)
    max_change = 0.0
    for j in range(p):
        if colsq[j] == 0.0:
            continue
        norm2 = 0.0
        for t in range(T):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * R[i, t]
            z[t] = acc / n + colsq[j] * W[j, t]
            norm2 += z[t] * z[t]
        norm = np.sqrt(norm2)
        if norm <= l1:
            scale = 0.0
        else:
            scale = (1.0 - l1 / norm) / (colsq[j] + l2)
        for t in range(T):
            new = scale * z[t]
            d = new - W[j, t]
            if d != 0.0:
                for i in range(n):
                    R[i, t] -= X[i, j] * d
                W[j, t] = new
                if abs(d) > max_change:
                    max_change = abs(d)
    return max_change
