"""Regression families: feature maps for the closed-form models and
forward/backward passes for the neural ones."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.interpolate import BSpline

from . import _conv

__all__ = [
    "TrainerConfig",
    "Linear",
    "Polynomial",
    "SplineRidge",
    "Mlp",
    "Conv1d",
    "spline_knots",
    "spline_features",
    "family_to_dict",
    "family_from_dict",
]

OPTIMIZERS = ("closed_form", "adam", "lbfgs")


@dataclass(frozen=True)
class TrainerConfig:
    """How a family's parameters are found.

    ``closed_form`` solves the normal equations and is only valid for the
    linear-in-parameters families. ``adam`` is mini-batch Adam with early
    stopping on a held-out fraction. ``lbfgs`` is full-batch L-BFGS-B,
    which is much faster for small networks on large sample sets.
    """

    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 256
    seed: int = 0
    early_stop_patience: int = 20
    validation_fraction: float = 0.1
    max_iter: int = 1000
    tol: float = 1e-12

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.max_iter < 1:
            raise ValueError("epochs, batch_size and max_iter must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


_CLOSED = TrainerConfig(optimizer="closed_form")


class _ClosedFormFamily:
    closed_form = True

    def check_trainer(self):
        if self.trainer.optimizer != "closed_form":
            raise ValueError(f"{type(self).__name__} is fitted in closed form only")

    def prepare(self, X):
        """Data-dependent feature state (e.g. knots); empty by default."""
        return {}

    def penalty(self, state, d_in):
        """Diagonal of the ridge penalty matrix, scaled by lambda."""
        return None


@dataclass(frozen=True)
class Linear(_ClosedFormFamily):
    """``f(x) = K x`` with no intercept (include a constant observable
    to get one)."""

    trainer: TrainerConfig = _CLOSED

    def n_features(self, d_in, state):
        return d_in

    def features(self, X, state):
        return np.asarray(X, dtype=float)


def _poly_terms(d, p):
    terms = [()]
    for deg in range(1, p + 1):
        terms.extend(combinations_with_replacement(range(d), deg))
    return terms


@dataclass(frozen=True)
class Polynomial(_ClosedFormFamily):
    """Full multivariate polynomial of total degree ``degree`` with intercept."""

    degree: int = 2
    trainer: TrainerConfig = _CLOSED

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("Polynomial degree must be >= 1")

    def n_features(self, d_in, state):
        return len(_poly_terms(d_in, self.degree))

    def features(self, X, state):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        terms = _poly_terms(d, self.degree)
        out = np.empty((n, len(terms)))
        cache = {(): np.ones(n)}
        for t, term in enumerate(terms):
            if term not in cache:
                cache[term] = cache[term[:-1]] * X[:, term[-1]]
            out[:, t] = cache[term]
        return out


def spline_knots(x, n_knots, range_factor=1.5):
    """``n_knots`` evenly spaced knots (boundaries included) from
    ``range_factor * min(x)`` to ``range_factor * max(x)``.

    The interval is widened to cover ``[min(x), max(x)]`` when the scaled
    bounds would not (e.g. all-positive data), and given unit width when
    the data is constant.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    a, b = min(range_factor * lo, lo), max(range_factor * hi, hi)
    if b - a <= 0:
        a, b = a - 0.5, b + 0.5
    return np.linspace(a, b, n_knots)


def _clamped_vector(knots, degree):
    knots = np.asarray(knots, dtype=float)
    return np.concatenate([np.repeat(knots[0], degree), knots, np.repeat(knots[-1], degree)])


def spline_features(x, knots, degree=3):
    """Clamped B-spline basis of the given knots evaluated at ``x``.

    ``x`` outside the knot range is clamped to the boundary, so the fitted
    spline extends as a constant. Returns ``len(knots) + degree - 1``
    columns per point; the columns sum to one everywhere.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 2 or np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be a strictly increasing 1-D array of length >= 2")
    scalar = np.ndim(x) == 0
    x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), knots[0], knots[-1])
    t = _clamped_vector(knots, degree)
    B = BSpline.design_matrix(x, t, degree).toarray()
    return B[0] if scalar else B


@dataclass(frozen=True)
class SplineRidge(_ClosedFormFamily):
    """Additive cubic spline regression with a ridge penalty.

    Each input dimension gets its own clamped B-spline basis with knots
    placed by :func:`spline_knots` on the training inputs. The penalty is
    the sum-of-squares form ``||y - F b||^2 + lam ||b_spline||^2``; the
    intercept is unpenalized. With ``lam == 0`` the intercept column is
    dropped because the basis already spans the constants.
    """

    n_knots: int = 10
    degree: int = 3
    lam: float = 10.0
    knot_range_factor: float = 1.5
    trainer: TrainerConfig = _CLOSED

    def __post_init__(self):
        if self.n_knots < 2:
            raise ValueError("SplineRidge needs n_knots >= 2")
        if self.degree < 1:
            raise ValueError("SplineRidge degree must be >= 1")
        if self.lam < 0:
            raise ValueError("SplineRidge lam must be >= 0")

    @property
    def _intercept(self):
        return self.lam > 0

    def prepare(self, X):
        X = np.asarray(X, dtype=float)
        return {"knots": [spline_knots(X[:, j], self.n_knots, self.knot_range_factor).tolist()
                          for j in range(X.shape[1])]}

    def n_features(self, d_in, state):
        return int(self._intercept) + d_in * (self.n_knots + self.degree - 1)

    def features(self, X, state):
        X = np.asarray(X, dtype=float)
        blocks = [np.ones((X.shape[0], 1))] if self._intercept else []
        for j, kn in enumerate(state["knots"]):
            blocks.append(spline_features(X[:, j], np.asarray(kn), self.degree))
        return np.hstack(blocks)

    def penalty(self, state, d_in):
        if not self._intercept:
            return None
        pen = np.full(self.n_features(d_in, state), self.lam)
        pen[0] = 0.0
        return pen


# --------------------------------------------------------------------------
# neural families


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(float)),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


class _GradientFamily:
    closed_form = False

    def check_trainer(self):
        if self.trainer.optimizer == "closed_form":
            raise ValueError(f"{type(self).__name__} has no closed-form solution")

    def n_params(self, d_in, d_out):
        return sum(int(np.prod(s)) for _, s, _ in self.param_layout(d_in, d_out))

    def unpack(self, theta, d_in, d_out):
        out, pos = [], 0
        for _, shape, _ in self.param_layout(d_in, d_out):
            size = int(np.prod(shape))
            out.append(theta[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init(self, d_in, d_out, rng):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        parts = []
        for _, shape, fan_in in self.param_layout(d_in, d_out):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        return np.concatenate(parts)


@dataclass(frozen=True)
class Mlp(_GradientFamily):
    """Fully connected network: hidden layers with ``activation``, linear output."""

    layer_sizes: tuple = (5, 5)
    activation: str = "tanh"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    def param_layout(self, d_in, d_out):
        dims = (d_in,) + self.layer_sizes + (d_out,)
        layout = []
        for i in range(len(dims) - 1):
            layout.append((f"W{i}", (dims[i], dims[i + 1]), dims[i]))
            layout.append((f"b{i}", (dims[i + 1],), dims[i]))
        return layout

    def forward(self, theta, X, d_in, d_out, keep=False):
        act = _ACTIVATIONS[self.activation][0]
        p = self.unpack(theta, d_in, d_out)
        h = X
        hs = [h]
        n_layers = len(p) // 2
        for i in range(n_layers):
            z = h @ p[2 * i] + p[2 * i + 1]
            h = act(z) if i < n_layers - 1 else z
            hs.append(h)
        return (h, hs) if keep else h

    def loss_grad(self, theta, X, Y, d_in, d_out):
        """Mean over samples of the squared error summed over outputs, and its gradient."""
        dact = _ACTIVATIONS[self.activation][1]
        p = self.unpack(theta, d_in, d_out)
        out, hs = self.forward(theta, X, d_in, d_out, keep=True)
        n = X.shape[0]
        r = out - Y
        loss = float(np.sum(r * r) / n)
        delta = 2.0 * r / n
        n_layers = len(p) // 2
        grads = [None] * len(p)
        for i in range(n_layers - 1, -1, -1):
            grads[2 * i] = hs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ p[2 * i].T) * dact(hs[i])
        return loss, np.concatenate([g.ravel() for g in grads])


def _pad(x, c, circular):
    """Pad (N, C, W) fields by ``c`` points on each side of the last axis."""
    if c == 0:
        return np.ascontiguousarray(x)
    if circular:
        return np.concatenate([x[:, :, x.shape[2] - c:], x, x[:, :, :c]], axis=2)
    return np.pad(x, ((0, 0), (0, 0), (c, c)))


def _unpad(dxp, c, circular):
    """Adjoint of :func:`_pad`."""
    if c == 0:
        return dxp
    W = dxp.shape[2] - 2 * c
    dx = dxp[:, :, c:c + W].copy()
    if circular:
        dx[:, :, W - c:] += dxp[:, :, :c]
        dx[:, :, :c] += dxp[:, :, W + c:]
    return dx


@dataclass(frozen=True)
class Conv1d(_GradientFamily):
    """Periodic 1-D convolutional network.

    The input vector of length ``C_in * W`` is read as ``C_in`` channel
    blocks of width ``W = d_out`` (so delay-embedded inputs become extra
    channels). ``n_layers`` convolutions with ``channels`` filters and an
    ``activation`` are followed by a linear 1x1 convolution down to one
    output channel. Padding is circular when ``circular`` is set, zero
    padding otherwise.
    """

    n_layers: int = 2
    channels: int = 5
    kernel_size: int = 11
    circular: bool = True
    activation: str = "tanh"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self):
        if self.n_layers < 1 or self.channels < 1:
            raise ValueError("n_layers and channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def _c_in(self, d_in, d_out):
        if d_in % d_out:
            raise ValueError(f"Conv1d input dim {d_in} is not a multiple of output width {d_out}")
        return d_in // d_out

    def param_layout(self, d_in, d_out):
        c_in, k = self._c_in(d_in, d_out), self.kernel_size
        layout = []
        for i in range(self.n_layers):
            ci = c_in if i == 0 else self.channels
            layout.append((f"K{i}", (self.channels, ci, k), k * ci))
            layout.append((f"b{i}", (self.channels,), k * ci))
        layout.append(("Khead", (self.channels,), self.channels))
        layout.append(("bhead", (1,), self.channels))
        return layout

    def forward(self, theta, X, d_in, d_out, keep=False):
        act = _ACTIVATIONS[self.activation][0]
        p = self.unpack(theta, d_in, d_out)
        c = self.kernel_size // 2
        h = np.asarray(X, dtype=float).reshape(-1, self._c_in(d_in, d_out), d_out)
        padded, hs = [], []
        for i in range(self.n_layers):
            xp = _pad(h, c, self.circular)
            padded.append(xp)
            h = act(_conv.conv_forward(xp, p[2 * i], p[2 * i + 1], d_out))
            hs.append(h)
        out = np.einsum("ncw,c->nw", h, p[-2]) + p[-1]
        return (out, hs, padded) if keep else out

    def loss_grad(self, theta, X, Y, d_in, d_out):
        """Mean over samples of the squared error summed over outputs, and its gradient."""
        dact = _ACTIVATIONS[self.activation][1]
        p = self.unpack(theta, d_in, d_out)
        out, hs, padded = self.forward(theta, X, d_in, d_out, keep=True)
        n = out.shape[0]
        c = self.kernel_size // 2
        r = out - Y
        loss = float(np.sum(r * r) / n)
        dout = 2.0 * r / n                                     # (n, W)
        grads = [None] * len(p)
        grads[-2] = np.einsum("ncw,nw->c", hs[-1], dout)
        grads[-1] = np.array([dout.sum()])
        dh = p[-2][None, :, None] * dout[:, None, :]           # (n, C, W)
        for i in range(self.n_layers - 1, -1, -1):
            dz = np.ascontiguousarray(dh * dact(hs[i]))
            gK, dxp = _conv.conv_backward(padded[i], dz, p[2 * i], i > 0)
            grads[2 * i] = gK
            grads[2 * i + 1] = dz.sum(axis=(0, 2))
            if i > 0:
                dh = _unpad(dxp, c, self.circular)
        return loss, np.concatenate([g.ravel() for g in grads])


# --------------------------------------------------------------------------
# (de)serialization


_KINDS = {"linear": Linear, "polynomial": Polynomial, "spline_ridge": SplineRidge,
          "mlp": Mlp, "conv1d": Conv1d}


def family_to_dict(family):
    kind = {v: k for k, v in _KINDS.items()}[type(family)]
    d = {"kind": kind}
    for f in dataclasses.fields(family):
        val = getattr(family, f.name)
        if f.name == "trainer":
            val = dataclasses.asdict(val)
        elif isinstance(val, tuple):
            val = list(val)
        d[f.name] = val
    return d


def family_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown family kind {kind!r}")
    cls = _KINDS[kind]
    if "trainer" in d:
        d["trainer"] = TrainerConfig(**d["trainer"])
    if "layer_sizes" in d:
        d["layer_sizes"] = tuple(d["layer_sizes"])
    return cls(**d)
