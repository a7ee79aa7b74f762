"""Multi-step prediction with the truncated generalized Langevin equation.

Each new snapshot is

    g_{n+1} = sum_{l=0..H-1} Omega^(l)(g~_{n-l}) + noise

where ``g~`` are observed history values or earlier predictions. Lags
reaching past the start of the supplied history are dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mzlearn import OperatorStack

__all__ = [
    "LINEAR_WITH_MEMORY",
    "NONLINEAR_WITH_MEMORY",
    "MARKOV_ONLY",
    "PredictionDiverged",
    "ZeroNoise",
    "GaussianIID",
    "PredictionConfig",
    "LinearOperators",
    "rollout",
    "predict_linear_memory",
    "predict_nonlinear_memory",
    "kappas_of",
    "fit_gaussian_noise",
    "write_prediction_csv",
]

LINEAR_WITH_MEMORY = "linear_with_memory"
NONLINEAR_WITH_MEMORY = "nonlinear_with_memory"
MARKOV_ONLY = "markov_only"
MODES = (LINEAR_WITH_MEMORY, NONLINEAR_WITH_MEMORY, MARKOV_ONLY)

BLOWUP = 1e8


class PredictionDiverged(FloatingPointError):
    """Raised when a rollout leaves ``|g| <= 1e8``; ``partial`` holds the
    predictions made so far (NaN afterwards) and ``step`` the failing step."""

    def __init__(self, partial, step, rows=None):
        self.partial = partial
        self.step = step
        self.rows = rows
        super().__init__(f"prediction diverged at step {step}")


@dataclass(frozen=True)
class ZeroNoise:
    def sample(self, rng, shape):
        return None


@dataclass(frozen=True)
class GaussianIID:
    """Independent draws from N(mean, covariance) at every step."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        w, V = np.linalg.eigh((cov + cov.T) / 2)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", V * np.sqrt(np.clip(w, 0.0, None)))

    def sample(self, rng, shape):
        z = rng.standard_normal(shape + (self.mean.size,))
        return self.mean + z @ self._factor.T


@dataclass(frozen=True)
class PredictionConfig:
    """Rollout settings.

    mode : one of ``linear_with_memory``, ``nonlinear_with_memory``,
        ``markov_only``
    horizon : number of predicted steps m
    history_length : number of operators H used (default: all)
    noise : ZeroNoise or GaussianIID
    """

    mode: str = NONLINEAR_WITH_MEMORY
    horizon: int = 1
    history_length: int | None = None
    noise: object = field(default_factory=ZeroNoise)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.history_length is not None and self.history_length < 1:
            raise ValueError("history_length must be >= 1")


class LinearOperators:
    """Stack of matrices kappa^(l) acting as ``x -> kappa^(l) x``."""

    def __init__(self, kappas):
        K = np.asarray(kappas, dtype=float)
        if K.ndim == 2:
            K = K[None]
        if K.ndim != 3:
            raise ValueError("kappas must be a list of matrices")
        self.K = K
        self.H, self.output_dim, self.input_dim = K.shape

    def __call__(self, X):
        return np.einsum("hij,nj->hni", self.K, X)

    def first(self, H):
        return LinearOperators(self.K[:H])


def _limit(stack, H):
    if H is None or H == stack.H:
        return stack
    if H > stack.H:
        raise ValueError(f"history_length {H} exceeds the {stack.H} available operators")
    if isinstance(stack, LinearOperators):
        return stack.first(H)
    return OperatorStack(stack.operators[:H])


def rollout(stack, history, horizon, embedding=1, noise=None, seed=0):
    """Core recursive predictor for a batch of histories.

    Parameters
    ----------
    stack : callable
        Maps (n, d_in) inputs to (H, n, d_out) operator outputs.
    history : ndarray, shape (B, T, d_out) or (T, d_out)
        Observed snapshots, oldest first.
    horizon : int
    embedding : int
        Inputs are the ``embedding`` most recent snapshots, newest first.
    noise : ZeroNoise or GaussianIID, optional

    Returns
    -------
    ndarray, shape (B, horizon, d_out) (or (horizon, d_out))
    """
    hist = np.asarray(history, dtype=float)
    single = hist.ndim == 2
    if single:
        hist = hist[None]
    B, T, d = hist.shape
    H, E = stack.H, int(embedding)
    if d * E != stack.input_dim or d != stack.output_dim:
        raise ValueError(f"history has {d} observables; operators expect inputs of {stack.input_dim} "
                         f"and outputs of {stack.output_dim} (embedding {E})")
    if T < E:
        raise ValueError(f"history of {T} snapshots is shorter than the embedding {E}")
    if not np.isfinite(hist).all():
        raise ValueError("history contains non-finite values")
    rng = np.random.default_rng(seed)
    noise = noise or ZeroNoise()

    g = np.empty((B, T + horizon, d))
    g[:, :T] = hist
    acc = np.zeros((B, horizon + H, d))            # acc[:, q] feeds g[:, T + q]

    def inputs(k):
        return g[:, k - E + 1:k + 1][:, ::-1].reshape(B, E * d)

    # history snapshot k contributes Omega^(l) to index k + l + 1 >= T
    first = max(E - 1, T - H)
    for k in range(first, T):
        out = stack(inputs(k))                      # (H, B, d)
        lo = T - 1 - k
        acc[:, :H - lo] += out[lo:].transpose(1, 0, 2)
    for q in range(horizon):
        val = acc[:, q]
        eps = noise.sample(rng, (B,))
        if eps is not None:
            val = val + eps
        bad = ~(np.abs(val) <= BLOWUP).all(axis=1)
        if bad.any():
            partial = g[:, T:].copy()
            partial[:, q:] = np.nan
            raise PredictionDiverged(partial[0] if single else partial, q, np.nonzero(bad)[0])
        g[:, T + q] = val
        if q + 1 < horizon:
            out = stack(inputs(T + q))
            acc[:, q + 1:q + 1 + H] += out.transpose(1, 0, 2)
    pred = g[:, T:]
    return pred[0] if single else pred


def predict_linear_memory(kappas, history, cfg):
    """Linear propagation ``g_{n+1} = sum_l kappa^(l) g~_{n-l}``.

    ``kappas`` is a list of (M, M) matrices (the coefficient matrices of a
    Linear-family model, transposed: ``kappa = coef.T``).
    """
    if cfg.mode != LINEAR_WITH_MEMORY:
        raise ValueError("predict_linear_memory needs mode linear_with_memory")
    stack = _limit(LinearOperators(kappas), cfg.history_length)
    return rollout(stack, history, cfg.horizon, noise=cfg.noise, seed=cfg.seed)


def predict_nonlinear_memory(model, history, cfg):
    """Recursive composition of the fitted operators of an MZModel.

    With mode ``markov_only`` only ``Omega^(0)`` is used.
    """
    if cfg.mode == LINEAR_WITH_MEMORY:
        raise ValueError("use predict_linear_memory for linear_with_memory")
    H = 1 if cfg.mode == MARKOV_ONLY else cfg.history_length
    stack = model.stack(H)
    if H is not None and H > model.H:
        raise ValueError(f"history_length {H} exceeds the {model.H} available operators")
    return rollout(stack, history, cfg.horizon, embedding=model.embedding, noise=cfg.noise, seed=cfg.seed)


def kappas_of(model):
    """Coefficient matrices of a Linear-family model as kappa^(l) = coef^T."""
    return [op.coef.T for op in model.operators]


def fit_gaussian_noise(residual_samples):
    """Mean and population covariance (divide by S) of residual samples (S, M)."""
    W = np.asarray(residual_samples, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] < 2:
        raise ValueError("need at least two residual samples")
    mean = W.mean(axis=0)
    cov = np.atleast_2d(np.cov(W, rowvar=False, bias=True))
    return mean, cov


def write_prediction_csv(path, times, values, names, config_hash=None):
    """One row per step: time followed by the observables."""
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["time"] + list(names))
        for t, row in zip(times, values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
