"""Recursive extraction of Mori-Zwanzig operators by regression.

Given snapshots ``g_k`` of the resolved observables, the generalized
Langevin equation

    g_{n+1} = sum_{l=0..n} Omega^(l)(g_{n-l}) + W_n

is learned order by order. Order 0 regresses ``g_1`` on ``g_0``. Order
``n >= 1`` regresses the target ``y_n = g_{n+1} - sum_{l<n} Omega^(l)(g_{n-l})``
on ``g_0``. The targets ``y_n`` are the orthogonal dynamics ``W_{n-1}``
evaluated one step after the initial state, and are stored as
``residual_samples[n-1]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import regress
from .datamat import read_binary, write_binary
from .regress import ClosedFormSolver, FittedModel, fit, predict
from .regress.families import family_from_dict, family_to_dict

log = logging.getLogger(__name__)

__all__ = [
    "INITIAL_TIME",
    "STATIONARY_POOLED",
    "MZModel",
    "CorrelationSet",
    "GfdReport",
    "OperatorStack",
    "extract_operators",
    "default_pairing",
    "correlations",
    "mori_closed_form",
    "orthogonal_dynamics",
    "gfd_check",
    "memory_norm_profile",
    "select_memory_length",
    "save_mz_model",
    "load_mz_model",
]

INITIAL_TIME = "initial_time"
STATIONARY_POOLED = "stationary_pooled"
PAIRINGS = (INITIAL_TIME, STATIONARY_POOLED)
MANIFEST_VERSION = 1


@dataclass(eq=False)
class MZModel:
    """Learned Markov and memory operators plus orthogonal-dynamics samples.

    Attributes
    ----------
    operators : list of FittedModel
        ``Omega^(0) .. Omega^(H-1)``.
    residual_samples : list of ndarray
        ``residual_samples[n]`` holds ``W_n`` at the shifted initial states,
        shape (S, M_out). Only the orders requested at extraction are kept.
    residual_orders : list of int
        Which orders ``residual_samples`` holds.
    diagnostics : dict
        ``fit_mse`` (summed over outputs) and ``component_mse`` per order.
    embedding : int
        Delay-embedding depth of the inputs; outputs are the first
        ``output_dim`` input channels.
    """

    family: object
    operators: list
    pairing_mode: str
    residual_samples: list = field(default_factory=list)
    residual_orders: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    seed: int = 0
    seeds: list = field(default_factory=list)
    delta: float = 1.0
    observable_names: list = field(default_factory=list)
    embedding: int = 1
    pool_stride: int = 1
    attrs: dict = field(default_factory=dict)

    @property
    def H(self):
        return len(self.operators)

    @property
    def input_dim(self):
        return self.operators[0].input_dim

    @property
    def output_dim(self):
        return self.operators[0].output_dim

    def residual(self, n):
        return self.residual_samples[self.residual_orders.index(n)]

    def truncated(self, H):
        """The same model keeping only the first ``H`` operators."""
        if not 1 <= H <= self.H:
            raise ValueError(f"H must lie in [1, {self.H}]")
        keep = [i for i, n in enumerate(self.residual_orders) if n < H - 1]
        diag = {k: v[:H] for k, v in self.diagnostics.items()}
        return MZModel(self.family, self.operators[:H], self.pairing_mode,
                       [self.residual_samples[i] for i in keep], [self.residual_orders[i] for i in keep],
                       diag, self.seed, self.seeds[:H], self.delta, list(self.observable_names),
                       self.embedding, self.pool_stride, dict(self.attrs))

    def stack(self, H=None):
        return OperatorStack(self.operators[:H])


# --------------------------------------------------------------------------
# stacked evaluation of all operators


class OperatorStack:
    """Evaluate several fitted operators on the same inputs at once.

    Closed-form models that share their feature map reduce to one matrix
    product; MLPs with a common architecture are evaluated with batched
    matrix products. Anything else falls back to a loop.
    """

    def __init__(self, operators):
        ops = list(operators)
        if not ops:
            raise ValueError("no operators")
        self.operators = ops
        self.H = len(ops)
        self.input_dim = ops[0].input_dim
        self.output_dim = ops[0].output_dim
        fam = ops[0].family
        self._kind = "loop"
        same_family = all(op.family == fam for op in ops)
        if same_family and fam.closed_form and all(op.state == ops[0].state for op in ops):
            self._kind = "features"
            self._B = np.hstack([op.coef for op in ops])
        elif same_family and isinstance(fam, regress.Mlp):
            self._kind = "mlp"
            parts = [fam.unpack(op.params, self.input_dim, self.output_dim) for op in ops]
            self._layers = [np.stack([p[i] for p in parts]) for i in range(len(parts[0]))]

    def __call__(self, X):
        """(n, d_in) inputs -> (H, n, d_out) outputs."""
        X = np.asarray(X, dtype=float)
        if self._kind == "features":
            Phi = self.operators[0].features(X)
            return (Phi @ self._B).reshape(X.shape[0], self.H, self.output_dim).transpose(1, 0, 2)
        if self._kind == "mlp":
            act = regress.families._ACTIVATIONS[self.operators[0].family.activation][0]
            h = X
            n_layers = len(self._layers) // 2
            for i in range(n_layers):
                W, b = self._layers[2 * i], self._layers[2 * i + 1]
                if i == 0:
                    z = np.einsum("na,hab->hnb", h, W) + b[:, None, :]
                else:
                    z = np.einsum("hna,hab->hnb", h, W) + b[:, None, :]
                h = act(z) if i < n_layers - 1 else z
            return h
        return np.stack([predict(op, X) for op in self.operators])


# --------------------------------------------------------------------------
# sample pairing


def default_pairing(D):
    """Pooled pairs for ergodic data, initial-time pairs for ensembles."""
    return STATIONARY_POOLED if D.provenance == "ergodic" else INITIAL_TIME


def _series(D, pairing_mode):
    """Rows as time series, (R, T, M). Overlapping ergodic windows of a
    single run are first joined back into that run."""
    v = D.values
    if (pairing_mode == STATIONARY_POOLED and D.provenance == "ergodic" and v.shape[0] > 1
            and np.array_equal(v[1:, :, :-1], v[:-1, :, 1:])):
        joined = np.concatenate([v[0], v[1:, :, -1].T], axis=1)
        return joined.T[None]
    return v.transpose(0, 2, 1)


class _Pairs:
    """Inputs and recursive targets for one pairing of a data matrix.

    Keeps ``acc[r, t] = sum_{l < n} Omega^(l)(g_r(t - l))`` over fitted
    orders, so that ``y_n(s) = g(s + n + 1) - acc[s + n]``.
    """

    def __init__(self, D, H, pairing_mode, output_dim, pool_stride=1):
        if pairing_mode not in PAIRINGS:
            raise ValueError(f"unknown pairing mode {pairing_mode!r}")
        self.mode = pairing_mode
        self.H = H
        self.m_out = output_dim
        g = _series(D, pairing_mode)                       # (R, T, M)
        R, T, M = g.shape
        if H < 1:
            raise ValueError("H must be >= 1")
        if H > T - 1:
            raise ValueError(f"H={H} too large for K={T} snapshots (need H <= K - 1)")
        self.g = g
        if pairing_mode == INITIAL_TIME:
            self.starts = np.array([0])
            self.T_eval = H                                  # times at which acc is needed
        else:
            self.starts = np.arange(0, T - H, pool_stride)
            self.T_eval = T - 1
        self.X = g[:, self.starts, :].reshape(-1, M)
        self.acc = np.zeros((R, self.T_eval, output_dim))
        self.n = 0

    def target(self):
        n = self.n
        t = self.starts + n
        y = self.g[:, t + 1, :self.m_out] - self.acc[:, t, :]
        return y.reshape(-1, self.m_out)

    def advance(self, op_values):
        """Add the freshly fitted Omega^(n), given as a callable on (k, M) inputs."""
        n = self.n
        if n + 1 < self.H:
            R = self.g.shape[0]
            span = self.T_eval - n                           # acc[t] for t = n .. T_eval-1
            src = self.g[:, :span, :].reshape(-1, self.g.shape[2])
            self.acc[:, n:, :] += op_values(src).reshape(R, span, self.m_out)
        self.n += 1


def extract_operators(D, family, H, pairing_mode=None, seed=0, keep_residuals="all",
                      pool_stride=1, output_dim=None, progress=None):
    """Learn ``Omega^(0..H-1)`` from a data matrix.

    Parameters
    ----------
    D : DataMatrix
    family : regression family
    H : int
        Number of operators, ``1 <= H <= K - 1``.
    pairing_mode : {"initial_time", "stationary_pooled"}, optional
        ``initial_time`` pairs ``g_0`` of every row with later snapshots of
        the same row. ``stationary_pooled`` treats every window start along
        each row as an initial time. Defaults to :func:`default_pairing`.
    seed : int
        Order ``n`` is trained with seed ``seed + n``.
    keep_residuals : "all", "first", "none" or iterable of int
        Which ``W_n`` sample sets to keep.
    pool_stride : int
        Use every ``pool_stride``-th window start in pooled mode.
    output_dim : int, optional
        Number of predicted channels. Defaults to all channels, or to the
        lag-0 block for delay-embedded data.
    progress : callable, optional
        Called as ``progress(n, fitted_model)`` after each order.

    Returns
    -------
    MZModel
    """
    pairing_mode = pairing_mode or default_pairing(D)
    if pool_stride < 1:
        raise ValueError("pool_stride must be >= 1")
    m_in = D.n_observables
    E = D.embedding
    m_out = output_dim or m_in // E
    if keep_residuals == "all":
        keep = set(range(H - 1))
    elif keep_residuals == "first":
        keep = {0} if H > 1 else set()
    elif keep_residuals == "none":
        keep = set()
    else:
        keep = set(int(k) for k in keep_residuals)
    pairs = _Pairs(D, H, pairing_mode, m_out, pool_stride)
    X = pairs.X
    family.check_trainer()

    solver = state = None
    if family.closed_form:
        state = family.prepare(X)
        Phi = family.features(X, state)
        solver = ClosedFormSolver(Phi, family.penalty(state, m_in))

    operators, seeds, fit_mse, comp_mse = [], [], [], []
    residuals, res_orders = [], []
    for n in range(H):
        Y = pairs.target()
        if n >= 1 and (n - 1) in keep:
            residuals.append(Y.copy())
            res_orders.append(n - 1)
        if solver is not None:
            beta = solver.solve(Y)
            r = Y - Phi @ beta
            op = FittedModel(family, beta, m_in, m_out, float(np.sum(r * r) / r.shape[0]), state,
                             {"jitter": solver.jitter})
        else:
            op = fit(family, X, Y, seed=seed + n)
            r = Y - predict(op, X)
        operators.append(op)
        seeds.append(seed + n)
        fit_mse.append(op.fit_mse)
        comp_mse.append(np.mean(r * r, axis=0).tolist())
        pairs.advance(lambda src, op=op: predict(op, src))
        if progress is not None:
            progress(n, op)

    return MZModel(family, operators, pairing_mode, residuals, res_orders,
                   {"fit_mse": fit_mse, "component_mse": comp_mse}, seed, seeds, D.delta,
                   list(D.observable_names), E, pool_stride, {})


# --------------------------------------------------------------------------
# closed-form oracle


@dataclass(frozen=True)
class CorrelationSet:
    """Lag-k correlation matrices ``C(k) = sum_s g(s + k) g(s)^T``, k = 0..H."""

    C: np.ndarray

    def __getitem__(self, k):
        return self.C[k]

    def __len__(self):
        return self.C.shape[0]


def correlations(D, H, pairing_mode=None, pool_stride=1):
    """Empirical lag correlations over the same sample set as :func:`extract_operators`."""
    pairing_mode = pairing_mode or default_pairing(D)
    g = _series(D, pairing_mode)
    R, T, M = g.shape
    if H > T - 1:
        raise ValueError(f"H={H} too large for K={T}")
    starts = np.array([0]) if pairing_mode == INITIAL_TIME else np.arange(0, T - H, pool_stride)
    x0 = g[:, starts, :].reshape(-1, M)
    C = np.empty((H + 1, M, M))
    for k in range(H + 1):
        C[k] = g[:, starts + k, :].reshape(-1, M).T @ x0
    return CorrelationSet(C)


def mori_closed_form(D, H, pairing_mode=None, pool_stride=1, output_dim=None):
    """Linear operators from lag correlations.

    ``Omega^(0) = C(1) C(0)^-1`` and
    ``Omega^(n) = [C(n+1) - sum_{l<n} Omega^(l) C(n-l)] C(0)^-1``,
    with the rows restricted to the predicted channels.
    """
    cs = correlations(D, H, pairing_mode, pool_stride)
    M = cs.C.shape[1]
    m_out = output_dim or M // D.embedding
    C0 = cs[0]
    w = np.linalg.eigvalsh(C0)
    if w.min() <= 1e3 * np.finfo(float).eps * max(w.max(), 0):
        C0 = C0 + 1e-10 * np.trace(C0) / M * np.eye(M)
    ops = []
    for n in range(H):
        S = cs[n + 1][:m_out].copy()
        for ell in range(n):
            S -= ops[ell] @ cs[n - ell]
        ops.append(np.linalg.solve(C0.T, S.T).T)
    return ops


# --------------------------------------------------------------------------
# diagnostics


def orthogonal_dynamics(model, D, n_orders=None):
    """``W_n`` at the initial states, ``g_{n+1} - sum_{l<=n} Omega^(l)(g_{n-l})``.

    Returns a list of (S, M_out) arrays for n = 0 .. n_orders-1 over the
    model's own sample set.
    """
    H = model.H
    n_orders = H if n_orders is None else n_orders
    pairs = _Pairs(D, H, model.pairing_mode, model.output_dim, model.pool_stride)
    out = []
    for n in range(n_orders):
        y = pairs.target()
        out.append(y - predict(model.operators[n], pairs.X))
        op = model.operators[n]
        pairs.advance(lambda src, op=op: predict(op, src))
    return out


@dataclass(frozen=True)
class GfdReport:
    """Per-order projection diagnostics.

    orthogonality[n] : RMS of the family's fit to ``W_n`` (zero when P W_n = 0)
    residual_rms[n]  : RMS of ``W_n`` itself
    replay[n]        : RMS difference between a refit to the stored shifted
                       residuals ``W_n`` and ``Omega^(n+1)``
    """

    orthogonality: np.ndarray
    residual_rms: np.ndarray
    replay: np.ndarray


def _rms(a):
    return float(np.sqrt(np.mean(np.square(a))))


def gfd_check(model, D, seed=None):
    """Check ``P W_n = 0`` and the fluctuation-dissipation recursion."""
    seed = model.seed if seed is None else seed
    pairs = _Pairs(D, model.H, model.pairing_mode, model.output_dim, model.pool_stride)
    X = pairs.X
    fam = model.family
    state = model.operators[0].state if fam.closed_form else None
    orth, wrms, replay = [], [], []
    for n, op in enumerate(model.operators):
        y = pairs.target()
        if n >= 1:
            refit = fit(fam, X, y, seed=seed + n, state=state)
            replay.append(_rms(predict(refit, X) - predict(model.operators[n], X)))
        W = y - predict(op, X)
        refit = fit(fam, X, W, seed=seed + n, state=state)
        orth.append(_rms(predict(refit, X)))
        wrms.append(_rms(W))
        pairs.advance(lambda src, op=op: predict(op, src))
    return GfdReport(np.array(orth), np.array(wrms), np.array(replay))


def memory_norm_profile(model, D_test, components=None, batch=20000):
    """Mean squared norm of each operator's output over all test snapshots.

    ``profile[l] = mean_k ||[Omega^(l)(g_k)]_components||^2`` for
    l = 0 .. H-1, taking every snapshot of ``D_test`` as an input.
    """
    X = D_test.snapshots()
    if X.shape[1] != model.input_dim:
        raise ValueError(f"test data has {X.shape[1]} channels, model expects {model.input_dim}")
    comps = slice(None) if components is None else list(components)
    stack = model.stack()
    total = np.zeros(model.H)
    for s in range(0, X.shape[0], batch):
        out = stack(X[s:s + batch])[:, :, comps]
        total += np.sum(out * out, axis=(1, 2))
    return total / X.shape[0]


def select_memory_length(profile, threshold=1e-7):
    """Smallest H with every ``profile[l]``, l >= H, strictly below ``threshold``.

    Returns ``len(profile)`` when the last value is not below the threshold.
    """
    p = np.asarray(profile, dtype=float)
    if p.size == 0:
        raise ValueError("empty profile")
    above = np.nonzero(~(p < threshold))[0]
    return int(above[-1] + 1) if above.size else 0


# --------------------------------------------------------------------------
# serialization


def save_mz_model(model, path):
    """Write a model directory: manifest.json, op_NNNN.{json,bin}, W_NNNN.mzdm."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ops = []
    for n, op in enumerate(model.operators):
        stem = f"op_{n:04d}"
        regress.save_model(op, path / stem)
        ops.append(stem)
    res = []
    for n, W in zip(model.residual_orders, model.residual_samples):
        name = f"W_{n:04d}.mzdm"
        write_binary(path / name, W[:, :, None], model.delta)
        res.append({"order": int(n), "file": name})
    manifest = {
        "version": MANIFEST_VERSION,
        "family": family_to_dict(model.family),
        "H": model.H,
        "pairing_mode": model.pairing_mode,
        "pool_stride": model.pool_stride,
        "seed": model.seed,
        "seeds": model.seeds,
        "delta": model.delta,
        "observable_names": model.observable_names,
        "embedding": model.embedding,
        "operators": ops,
        "residuals": res,
        "diagnostics": model.diagnostics,
        "attrs": model.attrs,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_mz_model(path):
    path = Path(path)
    man = json.loads((path / "manifest.json").read_text())
    if man.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {man.get('version')}")
    ops = [regress.load_model(path / stem) for stem in man["operators"]]
    res, orders = [], []
    for r in man["residuals"]:
        v, _ = read_binary(path / r["file"])
        res.append(v[:, :, 0])
        orders.append(r["order"])
    return MZModel(family_from_dict(man["family"]), ops, man["pairing_mode"], res, orders,
                   man["diagnostics"], man["seed"], man["seeds"], man["delta"],
                   man["observable_names"], man["embedding"], man["pool_stride"], man["attrs"])
