"""Compiled inner loops: the projected SGD recursion and fixed-step RK4 for the sphere flow."""

import numpy as np
from numba import njit


@njit(cache=True)
def advance(x, Y, coef, rec_steps, out, slot0):
    """Apply len(Y[r]) updates to each row of ``x`` in place.

    ``rec_steps`` holds 1-based local step indices whose state is written to
    ``out[r, slot0 + p]``.
    """
    R, d = x.shape
    K = Y.shape[1]
    m = rec_steps.shape[0]
    for r in range(R):
        p = 0
        for j in range(K):
            s = 0.0
            for i in range(d):
                s += x[r, i] * Y[r, j, i]
            c = coef * s * s * s
            nrm = 0.0
            for i in range(d):
                w = x[r, i] + c * Y[r, j, i]
                x[r, i] = w
                nrm += w * w
            nrm = np.sqrt(nrm)
            for i in range(d):
                x[r, i] /= nrm
            if p < m and rec_steps[p] == j + 1:
                for i in range(d):
                    out[r, slot0 + p, i] = x[r, i]
                p += 1
    return x


@njit(cache=True)
def _flow(V, gap, out):
    q = 0.0
    for i in range(V.shape[0]):
        q += V[i] ** 4
    for i in range(V.shape[0]):
        out[i] = gap * V[i] * (V[i] * V[i] - q)


@njit(cache=True)
def rk4_flow(V0, gap, h, n):
    """``n`` classical RK4 steps of size ``h``; returns all n + 1 states."""
    d = V0.shape[0]
    out = np.empty((n + 1, d))
    out[0] = V0
    V = V0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    for s in range(n):
        _flow(V, gap, k1)
        for i in range(d):
            tmp[i] = V[i] + 0.5 * h * k1[i]
        _flow(tmp, gap, k2)
        for i in range(d):
            tmp[i] = V[i] + 0.5 * h * k2[i]
        _flow(tmp, gap, k3)
        for i in range(d):
            tmp[i] = V[i] + h * k3[i]
        _flow(tmp, gap, k4)
        for i in range(d):
            V[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[s + 1] = V
    return out
