"""Compiled inner loops for the ODE and KS integrators.

Everything here is allocation-light numba code operating on plain arrays;
the public wrappers live in :mod:`regmz.dynamics`.
"""

import numpy as np
import numba

BLOWUP = 1e8

TOY, VDP, LORENZ = 0, 1, 2


@numba.njit(cache=True)
def _field(kind, p, x, out):
    if kind == TOY:
        out[0] = x[0] - x[0] * x[0]
    elif kind == VDP:
        mu = p[0]
        out[0] = mu * (x[0] - x[0] ** 3 / 3.0) - x[1]
        out[1] = x[0] / mu
    else:
        out[0] = p[0] * (x[1] - x[0])
        out[1] = x[0] * (p[1] - x[2]) - x[1]
        out[2] = x[0] * x[1] - p[2] * x[2]


@numba.njit(cache=True)
def rk4_advance(kind, p, x, dt, n_steps):
    """Advance ``x`` in place by ``n_steps`` RK4 steps.

    Returns the index of the first step whose result left the finite
    region (|x| > 1e8 or NaN), or -1 if all steps succeeded.
    """
    d = x.shape[0]
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    for s in range(n_steps):
        _field(kind, p, x, k1)
        for j in range(d):
            tmp[j] = x[j] + 0.5 * dt * k1[j]
        _field(kind, p, tmp, k2)
        for j in range(d):
            tmp[j] = x[j] + 0.5 * dt * k2[j]
        _field(kind, p, tmp, k3)
        for j in range(d):
            tmp[j] = x[j] + dt * k3[j]
        _field(kind, p, tmp, k4)
        for j in range(d):
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not abs(x[j]) <= BLOWUP:
                return s
    return -1


@numba.njit(cache=True)
def rk4_sample(kind, p, x0, dt, n_sub, n_burn, n_samples, out):
    """Integrate a batch of states and record ``n_samples`` snapshots each.

    ``x0`` is (B, D); ``out`` is (B, n_samples, D). Returns (row, step) of
    the first blow-up or (-1, -1).
    """
    b_count, d = x0.shape
    x = np.empty(d)
    for b in range(b_count):
        for j in range(d):
            x[j] = x0[b, j]
        fail = rk4_advance(kind, p, x, dt, n_burn)
        if fail >= 0:
            return b, fail
        for k in range(n_samples):
            for j in range(d):
                out[b, k, j] = x[j]
            if k == n_samples - 1:
                break
            fail = rk4_advance(kind, p, x, dt, n_sub)
            if fail >= 0:
                return b, n_burn + k * n_sub + fail
    return -1, -1


@numba.njit(cache=True)
def _ks_nonlinear(v, g):
    u = np.fft.ifft(v)
    return g * np.fft.fft(u * u)


@numba.njit(cache=True)
def ks_advance(v, e, e2, q, f1, f2, f3, g, n_steps):
    """ETDRK4 steps on the full complex spectrum ``v``; returns (v, fail)."""
    for s in range(n_steps):
        nv = _ks_nonlinear(v, g)
        a = e2 * v + q * nv
        na = _ks_nonlinear(a, g)
        b = e2 * v + q * na
        nb = _ks_nonlinear(b, g)
        c = e2 * a + q * (2.0 * nb - nv)
        nc = _ks_nonlinear(c, g)
        v = e * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        for j in range(v.shape[0]):
            if not abs(v[j]) <= BLOWUP:
                return v, s
    return v, -1


@numba.njit(cache=True)
def _ks_nonlinear_half(v, g, n):
    u = np.fft.irfft(v, n)
    return g * np.fft.rfft(u * u)


@numba.njit(cache=True)
def ks_advance_half(v, e, e2, q, f1, f2, f3, g, n, n_steps):
    """Same scheme as :func:`ks_advance` on the half (rfft) spectrum."""
    for s in range(n_steps):
        nv = _ks_nonlinear_half(v, g, n)
        a = e2 * v + q * nv
        na = _ks_nonlinear_half(a, g, n)
        b = e2 * v + q * na
        nb = _ks_nonlinear_half(b, g, n)
        c = e2 * a + q * (2.0 * nb - nv)
        nc = _ks_nonlinear_half(c, g, n)
        v = e * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        for j in range(v.shape[0]):
            if not abs(v[j]) <= BLOWUP:
                return v, s
    return v, -1


@numba.njit(cache=True)
def ks_sample(v, e, e2, q, f1, f2, f3, g, n, n_sub, n_burn, n_samples, out):
    """Record ``n_samples`` physical fields every ``n_sub`` steps after burn-in.

    ``v`` and the coefficient arrays are half spectra (length n // 2 + 1).
    """
    v, fail = ks_advance_half(v, e, e2, q, f1, f2, f3, g, n, n_burn)
    if fail >= 0:
        return fail
    for k in range(n_samples):
        u = np.fft.irfft(v, n)
        for j in range(n):
            out[k, j] = u[j]
        if k == n_samples - 1:
            break
        v, fail = ks_advance_half(v, e, e2, q, f1, f2, f3, g, n, n_sub)
        if fail >= 0:
            return n_burn + k * n_sub + fail
    return -1
