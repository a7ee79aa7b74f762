"""Compiled 1-D convolution kernels, channels-first layout (N, C, W)."""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def conv_forward(xp, K, b, W):
    """``z[n, o, w] = b[o] + sum_{c, j} K[o, c, j] xp[n, c, w + j]``."""
    N, Ci, _ = xp.shape
    Co, _, k = K.shape
    z = np.empty((N, Co, W))
    for n in range(N):
        for o in range(Co):
            row = z[n, o]
            for w in range(W):
                row[w] = b[o]
            for c in range(Ci):
                xr = xp[n, c]
                for j in range(k):
                    kv = K[o, c, j]
                    for w in range(W):
                        row[w] += kv * xr[w + j]
    return z


@numba.njit(cache=True, fastmath=True)
def conv_backward(xp, dz, K, want_dx):
    """Gradients of :func:`conv_forward` with respect to K and xp."""
    N, Ci, Wp = xp.shape
    Co, _, k = K.shape
    W = dz.shape[2]
    dK = np.zeros_like(K)
    dxp = np.zeros((N, Ci, Wp)) if want_dx else np.zeros((0, Ci, Wp))
    for n in range(N):
        for o in range(Co):
            g = dz[n, o]
            for c in range(Ci):
                xr = xp[n, c]
                for j in range(k):
                    acc = 0.0
                    for w in range(W):
                        acc += g[w] * xr[w + j]
                    dK[o, c, j] += acc
                    if want_dx:
                        kv = K[o, c, j]
                        dr = dxp[n, c]
                        for w in range(W):
                            dr[w + j] += kv * g[w]
    return dK, dxp
