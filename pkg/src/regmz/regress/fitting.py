"""Fitting, prediction and diagnostics for the regression families."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .families import family_from_dict, family_to_dict

log = logging.getLogger(__name__)

__all__ = [
    "TrainingDiverged",
    "FittedModel",
    "ClosedFormSolver",
    "fit",
    "predict",
    "mse",
    "gradient_check",
    "idempotence_residual",
    "save_model",
    "load_model",
]

JITTER = 1e-10
MAX_REFINE = 200
MODEL_VERSION = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg="training diverged"):
        super().__init__(msg)


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A family together with fitted parameters.

    For closed-form families ``params`` is the flattened (n_features, d_out)
    coefficient matrix and ``state`` holds data-dependent feature settings
    such as spline knots.
    """

    family: object
    params: np.ndarray
    input_dim: int
    output_dim: int
    fit_mse: float
    state: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.array(self.params, dtype=float).ravel()
        if not np.isfinite(p).all():
            raise TrainingDiverged("fitted parameters are not finite")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)

    @property
    def coef(self):
        """Coefficient matrix of a closed-form model, shape (n_features, d_out)."""
        if not self.family.closed_form:
            raise AttributeError("only closed-form models have a coefficient matrix")
        return self.params.reshape(-1, self.output_dim)

    def features(self, X):
        return self.family.features(X, self.state)

    def __call__(self, X):
        return predict(self, X)


def mse(pred, Y):
    """Mean over samples of the squared error summed over output dimensions."""
    r = np.asarray(pred) - np.asarray(Y)
    return float(np.sum(r * r) / r.shape[0])


def _as_2d(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    if X.shape[0] < 1:
        raise ValueError(f"{name} has no samples")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


class ClosedFormSolver:
    """Factorized normal equations for a fixed design matrix.

    Solving for several targets against the same inputs (as happens for
    every memory order) reuses one factorization. Rank deficiency is
    resolved by adding ``1e-10 * trace(G) / P`` to the diagonal; the
    amount is logged and kept in :attr:`jitter`.
    """

    def __init__(self, Phi, penalty=None, gram=None):
        self.Phi = Phi
        G = Phi.T @ Phi if gram is None else np.array(gram, dtype=float)
        if penalty is not None:
            G = G + np.diag(penalty)
        self.gram = G
        P = G.shape[0]
        self.jitter = 0.0
        try:
            self._cho = scipy.linalg.cho_factor(G)
            rcond = self._rcond()
            if not rcond > 1e3 * np.finfo(float).eps:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            scale = np.trace(G) / P if np.trace(G) > 0 else 1.0
            self.jitter = JITTER * scale
            log.warning("normal matrix is rank-deficient; adding jitter %.3g", self.jitter)
            self._cho = scipy.linalg.cho_factor(G + self.jitter * np.eye(P))

    def _rcond(self):
        d = np.abs(np.diag(self._cho[0]))
        return (d.min() / d.max()) ** 2 if d.max() > 0 else 0.0

    def solve_rhs(self, rhs):
        return scipy.linalg.cho_solve(self._cho, rhs)

    def solve(self, Y, Phi=None):
        """Least-squares coefficients for targets Y.

        Without jitter one refinement step is taken. With jitter the
        refinement is iterated; every correction lies in the range of the
        Gram matrix, so the iteration converges to the minimum-norm
        solution and refits of the same features stay idempotent.
        """
        Phi = self.Phi if Phi is None else Phi
        rhs = Phi.T @ Y
        beta = self.solve_rhs(rhs)
        n_iter = 1 if self.jitter == 0.0 else MAX_REFINE
        for _ in range(n_iter):
            step = self.solve_rhs(rhs - self.gram @ beta)
            beta = beta + step
            if np.abs(step).max() <= 1e-15 * max(np.abs(beta).max(), 1e-300):
                break
        return beta


def _closed_form_fit(family, X, Y, state=None):
    state = family.prepare(X) if state is None else state
    Phi = family.features(X, state)
    solver = ClosedFormSolver(Phi, family.penalty(state, X.shape[1]))
    beta = solver.solve(Y)
    info = {"jitter": solver.jitter}
    return FittedModel(family, beta, X.shape[1], Y.shape[1], mse(Phi @ beta, Y), state, info)


def _split(n, frac, rng):
    n_val = int(round(frac * n))
    if n_val < 1 or n - n_val < 1:
        idx = np.arange(n)
        return idx, idx[:0]
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _adam(family, theta, X, Y, d_in, d_out, tr, rng):
    tr_idx, va_idx = _split(X.shape[0], tr.validation_fraction, rng)
    Xt, Yt = X[tr_idx], Y[tr_idx]
    Xv, Yv = (X[va_idx], Y[va_idx]) if va_idx.size else (Xt, Yt)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    best = (np.inf, theta.copy())
    stall = 0
    n = Xt.shape[0]
    for epoch in range(tr.epochs):
        order = rng.permutation(n)
        for s in range(0, n, tr.batch_size):
            bi = order[s:s + tr.batch_size]
            loss, g = family.loss_grad(theta, Xt[bi], Yt[bi], d_in, d_out)
            if not np.isfinite(loss):
                raise TrainingDiverged()
            t += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - tr.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        val = mse(family.forward(theta, Xv, d_in, d_out), Yv)
        if not np.isfinite(val):
            raise TrainingDiverged()
        if val < best[0]:
            best, stall = (val, theta.copy()), 0
        else:
            stall += 1
            if stall >= tr.early_stop_patience:
                break
    return best[1], {"epochs": epoch + 1, "validation_mse": best[0]}


def _lbfgs(family, theta, X, Y, d_in, d_out, tr):
    def fun(th):
        loss, g = family.loss_grad(th, X, Y, d_in, d_out)
        if not np.isfinite(loss):
            raise TrainingDiverged()
        return loss, g

    res = scipy.optimize.minimize(fun, theta, jac=True, method="L-BFGS-B",
                                  options={"maxiter": tr.max_iter, "ftol": tr.tol, "gtol": 1e-10})
    return res.x, {"iterations": int(res.nit), "message": str(res.message)}


def fit(family, X, Y, seed=None, init=None, state=None):
    """Fit ``family`` to samples by minimizing the summed-output MSE.

    Parameters
    ----------
    family : Linear, Polynomial, SplineRidge, Mlp or Conv1d
    X : array_like, shape (N, d_in)
    Y : array_like, shape (N, d_out)
    seed : int, optional
        Overrides ``family.trainer.seed`` for initialization and batching.
    init : array_like, optional
        Warm-start parameters for gradient families.
    state : dict, optional
        Fixed feature state for closed-form families (default: derived
        from ``X``).

    Returns
    -------
    FittedModel
    """
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} samples but Y has {Y.shape[0]}")
    family.check_trainer()
    if family.closed_form:
        return _closed_form_fit(family, X, Y, state)

    d_in, d_out = X.shape[1], Y.shape[1]
    tr = family.trainer
    seed = tr.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    theta = family.init(d_in, d_out, rng) if init is None else np.array(init, dtype=float)
    if theta.size != family.n_params(d_in, d_out):
        raise ValueError("initial parameter vector has the wrong length")
    if tr.optimizer == "adam":
        theta, info = _adam(family, theta, X, Y, d_in, d_out, tr, rng)
    else:
        theta, info = _lbfgs(family, theta, X, Y, d_in, d_out, tr)
    if not np.isfinite(theta).all():
        raise TrainingDiverged()
    info["seed"] = int(seed)
    fm = mse(family.forward(theta, X, d_in, d_out), Y)
    return FittedModel(family, theta, d_in, d_out, fm, {}, info)


def predict(model, X):
    """Evaluate a fitted model on one input vector or a batch (N, d_in)."""
    x = np.asarray(X, dtype=float)
    single = x.ndim == 1
    x = x[None] if single else x
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected input dimension {model.input_dim}, got shape {np.shape(X)}")
    if model.family.closed_form:
        out = model.features(x) @ model.coef
    else:
        out = model.family.forward(model.params, x, model.input_dim, model.output_dim)
    return out[0] if single else out


def gradient_check(family, theta, X, Y, step=1e-5, zero_tol=1e-7):
    """Largest discrepancy between analytic and central-difference gradients.

    Entries are compared relatively, ``|a - f| / max(|a|, |f|)``, except
    where both gradients are below ``zero_tol`` in magnitude; those are
    compared absolutely.
    """
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    d_in, d_out = X.shape[1], Y.shape[1]
    theta = np.array(theta, dtype=float)
    _, g = family.loss_grad(theta, X, Y, d_in, d_out)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += step
        tm = theta.copy()
        tm[i] -= step
        fd[i] = (family.loss_grad(tp, X, Y, d_in, d_out)[0]
                 - family.loss_grad(tm, X, Y, d_in, d_out)[0]) / (2 * step)
    scale = np.maximum(np.abs(g), np.abs(fd))
    err = np.where(scale > zero_tol, np.abs(g - fd) / np.where(scale > 0, scale, 1.0), np.abs(g - fd))
    return float(err.max())


def idempotence_residual(model, X):
    """Refit the model's family to its own predictions and measure the change.

    Closed-form families: max absolute difference of the coefficient
    vectors (the same feature state is reused). Gradient families: RMS
    difference of the predictions after a warm-started refit.
    """
    X = _as_2d(X, "X")
    Yhat = predict(model, X)
    if model.family.closed_form:
        again = fit(model.family, X, Yhat, state=model.state)
        return float(np.max(np.abs(again.params - model.params)))
    seed = model.info.get("seed")
    again = fit(model.family, X, Yhat, seed=seed, init=model.params)
    d = predict(again, X) - Yhat
    return float(np.sqrt(np.mean(d * d)))


# --------------------------------------------------------------------------
# serialization


def save_model(model, path):
    """Write ``path.json`` (header) and ``path.bin`` (little-endian f64 params)."""
    path = Path(path)
    header = {"version": MODEL_VERSION, "family": family_to_dict(model.family),
              "input_dim": model.input_dim, "output_dim": model.output_dim,
              "n_params": int(model.params.size), "fit_mse": model.fit_mse,
              "state": model.state, "info": model.info}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    model.params.astype("<f8").tofile(path.with_suffix(".bin"))


def load_model(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {header.get('version')}")
    params = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if params.size != header["n_params"]:
        raise ValueError(f"{path}: parameter blob has {params.size} values, expected {header['n_params']}")
    return FittedModel(family_from_dict(header["family"]), params, header["input_dim"],
                       header["output_dim"], header["fit_mse"], header["state"], header["info"])


def with_trainer(family, **changes):
    """Copy of ``family`` with some trainer settings replaced."""
    return replace(family, trainer=replace(family.trainer, **changes))
