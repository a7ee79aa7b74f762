"""Ground-truth trajectories of the benchmark systems.

Four systems are supported: the 1-D logistic toy model ``dphi/dt = phi - phi^2``,
the Van der Pol oscillator, Lorenz-63, and the Kuramoto-Sivashinsky (KS)
equation ``u_t + u_xx + u_xxxx + u u_x = 0`` on a periodic domain.

ODEs are integrated with classical fixed-step RK4; KS uses a pseudo-spectral
ETDRK4 scheme with 2/3 de-aliasing of the nonlinear term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import _kernels

__all__ = [
    "BlowUpError",
    "ToyLogistic",
    "VanDerPol",
    "Lorenz63",
    "KuramotoSivashinsky",
    "TrajectoryConfig",
    "EtdrkCoefficients",
    "ShiftedBeta",
    "LimitCycle",
    "FixedState",
    "vector_field",
    "step_rk4",
    "ks_precompute",
    "ks_step",
    "ks_initial_field",
    "simulate",
    "limit_cycle",
    "sample_initial",
    "logistic_solution",
]


class BlowUpError(FloatingPointError):
    """Raised when an integration leaves the finite region."""

    def __init__(self, time, row=None):
        self.time = time
        self.row = row
        where = "" if row is None else f" (trajectory {row})"
        super().__init__(f"numerical blow-up at t={time:.6g}{where}")


@dataclass(frozen=True)
class ToyLogistic:
    dim = 1


@dataclass(frozen=True)
class VanDerPol:
    mu: float = 1.0
    dim = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("VanDerPol.mu must be positive")


@dataclass(frozen=True)
class Lorenz63:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dim = 3

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho > 0 and self.beta > 0):
            raise ValueError("Lorenz63 parameters must be positive")


@dataclass(frozen=True)
class KuramotoSivashinsky:
    L: float = 16 * math.pi
    n_grid: int = 128
    contour_points: int = 32
    contour_radius: float = 1.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("KS domain length must be positive")
        if self.n_grid % 2 or self.n_grid < 16:
            raise ValueError("KS n_grid must be even and >= 16")

    @property
    def dim(self):
        return self.n_grid

    @property
    def grid(self):
        return self.L * np.arange(self.n_grid) / self.n_grid


SystemSpec = Union[ToyLogistic, VanDerPol, Lorenz63, KuramotoSivashinsky]


def _ode_code(spec):
    if isinstance(spec, ToyLogistic):
        return _kernels.TOY, np.zeros(1)
    if isinstance(spec, VanDerPol):
        return _kernels.VDP, np.array([spec.mu])
    if isinstance(spec, Lorenz63):
        return _kernels.LORENZ, np.array([spec.sigma, spec.rho, spec.beta])
    raise TypeError(f"{type(spec).__name__} is not an ODE system")


def _substeps(total, dt, what):
    n = int(round(total / dt))
    if abs(n * dt - total) > 1e-9 * max(abs(total), dt):
        raise ValueError(f"inner_dt={dt} does not divide {what}={total}")
    return n


@dataclass(frozen=True)
class TrajectoryConfig:
    """Sampling parameters for one simulation.

    ``inner_dt`` defaults to ``sample_interval / 100``; it must divide both
    the sampling interval and the burn-in time exactly.
    """

    sample_interval: float
    n_snapshots: int
    burn_in: float = 0.0
    inner_dt: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_snapshots < 2:
            raise ValueError("need at least two snapshots")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        if self.inner_dt is None:
            object.__setattr__(self, "inner_dt", self.sample_interval / 100)
        self.substeps
        self.burn_in_steps

    @property
    def substeps(self):
        return _substeps(self.sample_interval, self.inner_dt, "sample_interval")

    @property
    def burn_in_steps(self):
        if self.burn_in == 0:
            return 0
        return _substeps(self.burn_in, self.inner_dt, "burn_in")


def vector_field(spec, x):
    """Right-hand side of the ODE at state ``x`` (numpy reference version)."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, ToyLogistic):
        return x - x**2
    if isinstance(spec, VanDerPol):
        return np.array([spec.mu * (x[0] - x[0] ** 3 / 3) - x[1], x[0] / spec.mu])
    if isinstance(spec, Lorenz63):
        return np.array([
            spec.sigma * (x[1] - x[0]),
            x[0] * (spec.rho - x[2]) - x[1],
            x[0] * x[1] - spec.beta * x[2],
        ])
    raise TypeError(f"{type(spec).__name__} is not an ODE system")


def step_rk4(spec, state, dt):
    """One classical RK4 step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    kind, p = _ode_code(spec)
    x = np.array(state, dtype=float).reshape(-1)
    if x.shape[0] != spec.dim:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {spec.dim}")
    if not np.all(np.isfinite(x)):
        raise BlowUpError(0.0)
    if _kernels.rk4_advance(kind, p, x, float(dt), 1) >= 0:
        raise BlowUpError(dt)
    return x


def logistic_solution(phi0, t):
    """Closed-form solution of ``dphi/dt = phi - phi^2``."""
    phi0 = np.asarray(phi0, dtype=float)
    et = np.exp(np.asarray(t, dtype=float))
    return phi0 * et / (1.0 + phi0 * (et - 1.0))


# --------------------------------------------------------------------------
# Kuramoto-Sivashinsky


@dataclass(frozen=True, eq=False)
class EtdrkCoefficients:
    """ETDRK4 weights for a fixed (L, n_grid, dt).

    Arrays are indexed by the full FFT ordering of ``n_grid`` modes.
    ``nonlinear`` is the multiplier ``-i k / 2`` with the upper third of
    modes zeroed, so that ``nonlinear * fft(u**2)`` is the de-aliased
    transform of ``-u u_x``.
    """

    L: float
    n_grid: int
    dt: float
    wavenumbers: np.ndarray
    linear: np.ndarray
    exp_full: np.ndarray
    exp_half: np.ndarray
    q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    nonlinear: np.ndarray
    dealias_mask: np.ndarray = field(repr=False)

    def matches(self, L, n_grid, dt):
        return (self.L, self.n_grid, self.dt) == (L, n_grid, dt)


def ks_precompute(L, n_grid, dt, contour_points=32, contour_radius=1.0):
    """Precompute ETDRK4 coefficients for the KS linear symbol ``k^2 - k^4``.

    The phi-functions are evaluated by averaging over ``contour_points``
    points on a circle of radius ``contour_radius`` around each ``dt * lambda``
    (Kassam & Trefethen 2005), which avoids cancellation for small eigenvalues.
    """
    if n_grid % 2:
        raise ValueError("n_grid must be even")
    if not dt > 0:
        raise ValueError("dt must be positive")
    index = np.fft.fftfreq(n_grid, 1.0 / n_grid)
    k = 2 * np.pi / L * index
    lin = k**2 - k**4
    roots = contour_radius * np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    lr = dt * lin[:, None] + roots[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
    f2 = dt * np.real(np.mean((2 + lr + np.exp(lr) * (lr - 2)) / lr**3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=1))
    mask = np.abs(index) <= n_grid / 3
    nonlinear = (-0.5j * k) * mask
    return EtdrkCoefficients(
        L=float(L), n_grid=int(n_grid), dt=float(dt), wavenumbers=k, linear=lin,
        exp_full=np.exp(dt * lin), exp_half=np.exp(dt * lin / 2),
        q=q, f1=f1, f2=f2, f3=f3, nonlinear=nonlinear.astype(complex), dealias_mask=mask,
    )


def _ks_args(c, half=False):
    arrays = (c.exp_full, c.exp_half, c.q, c.f1, c.f2, c.f3, c.nonlinear)
    if half:
        # rfft ordering: non-negative modes 0..n/2
        arrays = tuple(a[: c.n_grid // 2 + 1] for a in arrays)
    return tuple(np.ascontiguousarray(a, dtype=complex) for a in arrays)


def ks_step(coeffs, u_hat, n_steps=1):
    """Advance the full complex spectrum ``u_hat`` by ETDRK4 steps."""
    u_hat = np.asarray(u_hat, dtype=complex)
    if u_hat.shape != (coeffs.n_grid,):
        raise ValueError(f"spectrum must have {coeffs.n_grid} modes")
    if not np.all(np.isfinite(u_hat)):
        raise BlowUpError(0.0)
    v, fail = _kernels.ks_advance(u_hat.copy(), *_ks_args(coeffs), int(n_steps))
    if fail >= 0:
        raise BlowUpError((fail + 1) * coeffs.dt)
    return v


def ks_initial_field(spec, which="train"):
    """The two reference initial fields on the KS grid.

    ``train``: cos(2 pi x / L) (1 + sin(2 pi x / L));
    ``test``:  sin(2 pi x / L) (1 + cos(2 pi x / L)).
    """
    y = 2 * np.pi * spec.grid / spec.L
    if which == "train":
        return np.cos(y) * (1 + np.sin(y))
    if which == "test":
        return np.sin(y) * (1 + np.cos(y))
    raise ValueError(f"unknown KS initial field {which!r}")


# --------------------------------------------------------------------------
# Simulation


def simulate(spec, cfg, x0):
    """Sample ``cfg.n_snapshots`` states every ``cfg.sample_interval`` after burn-in.

    ``x0`` is a single state (D,) or a batch (B, D); the result is (K, D) or
    (B, K, D) accordingly. The first snapshot is the state at ``t = burn_in``.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    batch = np.atleast_2d(x0)
    if batch.shape[1] != spec.dim:
        raise ValueError(f"initial state has dimension {batch.shape[1]}, expected {spec.dim}")
    if not np.all(np.isfinite(batch)):
        raise BlowUpError(0.0)
    K = cfg.n_snapshots
    n_sub, n_burn = cfg.substeps, cfg.burn_in_steps
    if isinstance(spec, KuramotoSivashinsky):
        coeffs = ks_precompute(spec.L, spec.n_grid, cfg.inner_dt,
                               spec.contour_points, spec.contour_radius)
        out = np.empty((batch.shape[0], K, spec.dim))
        for b, u0 in enumerate(batch):
            fail = _kernels.ks_sample(np.fft.rfft(u0), *_ks_args(coeffs, half=True), spec.n_grid,
                                      n_sub, n_burn, K, out[b])
            if fail >= 0:
                raise BlowUpError((fail + 1) * cfg.inner_dt, row=b)
    else:
        kind, p = _ode_code(spec)
        out = np.empty((batch.shape[0], K, spec.dim))
        row, fail = _kernels.rk4_sample(kind, p, np.ascontiguousarray(batch), cfg.inner_dt,
                                        n_sub, n_burn, K, out)
        if row >= 0:
            raise BlowUpError((fail + 1) * cfg.inner_dt, row=row)
    return out[0] if single else out


# --------------------------------------------------------------------------
# Initial distributions


@dataclass(frozen=True)
class ShiftedBeta:
    """``shift + Beta(a, b)`` on the real line (1-D states)."""

    a: float = 2.0
    b: float = 2.0
    shift: float = 0.5


@dataclass(frozen=True, eq=False)
class LimitCycle:
    """A closed orbit stored densely over one period, anchored at ``states[0]``."""

    spec: VanDerPol
    period: float
    states: np.ndarray
    inner_dt: float


@dataclass(frozen=True, eq=False)
class FixedState:
    state: np.ndarray


InitialDistribution = Union[ShiftedBeta, LimitCycle, FixedState]


def _upward_crossings(x, dt):
    i = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    return (i + x[i] / (x[i] - x[i + 1])) * dt


def limit_cycle(spec, x0=(0.0, 1.0), t_relax=100.0, inner_dt=1e-3, n_periods=20):
    """Relax onto the attracting cycle and store one period of it.

    The period is the mean spacing of upward zero crossings of the first
    component over ``n_periods`` cycles (linear interpolation between steps);
    the stored orbit starts at an upward zero crossing.
    """
    rough = simulate(spec, TrajectoryConfig(inner_dt, int(n_periods * 8 / inner_dt),
                                            burn_in=t_relax, inner_dt=inner_dt), x0)
    crossings = _upward_crossings(rough[:, 0], inner_dt)
    if len(crossings) < 3:
        raise ValueError("no periodic orbit detected")
    period = float(np.mean(np.diff(crossings)))
    start = int(np.ceil(crossings[0] / inner_dt))
    n = int(round(period / inner_dt))
    states = rough[start:start + n + 1]
    return LimitCycle(spec=spec, period=period, states=states, inner_dt=inner_dt)


def sample_initial(dist, n, seed=0):
    """Draw ``n`` initial states, shape (n, D)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(dist, ShiftedBeta):
        rng = np.random.default_rng(seed)
        return (dist.shift + rng.beta(dist.a, dist.b, size=n))[:, None]
    if isinstance(dist, FixedState):
        s = np.asarray(dist.state, dtype=float).reshape(1, -1)
        return np.repeat(s, n, axis=0)
    if isinstance(dist, LimitCycle):
        # evenly spaced phases: index into the dense orbit
        idx = np.round(np.arange(n) * (len(dist.states) - 1) / n).astype(int)
        return dist.states[idx].copy()
    raise ValueError(f"unknown initial distribution {dist!r}")
