"""The N x M x K snapshot data matrix and the transforms that build it.

``D[i, j, k]`` is observable ``j`` evaluated on sample ``i`` at time index
``k``. Ensemble data has one independent trajectory per row. Ergodic data
holds segments of long stationary runs, either stored whole (one row per
run) or cut into overlapping windows of a single run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

__all__ = [
    "DataMatrix",
    "Monomials",
    "RawComponents",
    "CoarseGrid",
    "AugmentationSpec",
    "build_data_matrix",
    "evaluate_observables",
    "coarse_grain",
    "augment",
    "delay_embed",
    "save_data_matrix",
    "load_data_matrix",
    "write_binary",
    "read_binary",
]

MAGIC = b"MZDM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH3Qd")

PROVENANCES = ("ensemble", "ergodic")


def _readonly(a):
    a = np.asarray(a, dtype=np.float64)
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Immutable snapshot tensor with its metadata.

    Parameters
    ----------
    values : ndarray, shape (N, M, K)
    delta : float
        Time between consecutive snapshots.
    observable_names : list of str
        One unique label per observable.
    provenance : {"ensemble", "ergodic"}
    attrs : dict
        Free-form JSON-serializable metadata (seeds, config hash,
        ``subgrid_factor`` for KS fine data, ``embedding`` after
        :func:`delay_embed`, ...).
    """

    values: np.ndarray
    delta: float
    observable_names: tuple
    provenance: str = "ensemble"
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 3:
            raise ValueError(f"values must be 3-D (N, M, K), got shape {v.shape}")
        n, m, k = v.shape
        if n < 1 or m < 1:
            raise ValueError("data matrix is empty")
        if k < 2:
            raise ValueError("need K >= 2 time indices")
        if not np.isfinite(v).all():
            raise ValueError("data matrix contains non-finite values")
        names = tuple(str(s) for s in self.observable_names)
        if len(names) != m:
            raise ValueError(f"{len(names)} observable names for M={m}")
        if len(set(names)) != m:
            raise ValueError("observable names must be unique")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observable_names", names)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "attrs", dict(self.attrs))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_observables(self):
        return self.values.shape[1]

    @property
    def n_times(self):
        return self.values.shape[2]

    @property
    def embedding(self):
        return int(self.attrs.get("embedding", 1))

    def replace(self, **changes):
        kw = dict(values=self.values, delta=self.delta, observable_names=self.observable_names,
                  provenance=self.provenance, attrs=self.attrs)
        kw.update(changes)
        return DataMatrix(**kw)

    def snapshots(self):
        """All snapshots as an (N*K, M) array (time-major within each row)."""
        return self.values.transpose(0, 2, 1).reshape(-1, self.n_observables)

    def __eq__(self, other):
        if not isinstance(other, DataMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.values, other.values)
                and self.delta == other.delta
                and self.observable_names == other.observable_names
                and self.provenance == other.provenance
                and self.attrs == other.attrs)


# --------------------------------------------------------------------------
# observable dictionaries


def _monomial_terms(n_vars, max_degree, include_constant):
    terms = [()] if include_constant else []
    for deg in range(1, max_degree + 1):
        terms.extend(combinations_with_replacement(range(n_vars), deg))
    return terms


@dataclass(frozen=True)
class Monomials:
    """All monomials of the selected state components up to ``max_degree``.

    The constant comes first when included, then degree 1, 2, ... in
    lexicographic order of the variable indices.
    """

    max_degree: int
    include_constant: bool = True
    components: tuple | None = None

    def __post_init__(self):
        if self.max_degree < 1:
            raise ValueError("Monomials needs max_degree >= 1")
        if self.components is not None:
            object.__setattr__(self, "components", tuple(int(c) for c in self.components))

    def _vars(self, state_dim):
        comps = tuple(range(state_dim)) if self.components is None else self.components
        if any(c < 0 or c >= state_dim for c in comps):
            raise ValueError(f"component index out of range for state dimension {state_dim}")
        return comps

    def names(self, state_dim):
        comps = self._vars(state_dim)
        sym = ["phi"] if len(comps) == 1 else [f"x{c}" for c in comps]
        out = []
        for term in _monomial_terms(len(comps), self.max_degree, self.include_constant):
            if not term:
                out.append("1")
                continue
            parts = []
            for v in sorted(set(term)):
                p = term.count(v)
                parts.append(sym[v] if p == 1 else f"{sym[v]}^{p}")
            out.append("*".join(parts))
        return out

    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        comps = self._vars(states.shape[-1])
        x = states[..., list(comps)]
        cols = []
        for term in _monomial_terms(len(comps), self.max_degree, self.include_constant):
            c = np.ones(x.shape[:-1])
            for v in term:
                c = c * x[..., v]
            cols.append(c)
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class RawComponents:
    """Selected state components, unchanged."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("RawComponents needs at least one index")
        object.__setattr__(self, "indices", idx)

    def names(self, state_dim):
        if any(i < 0 or i >= state_dim for i in self.indices):
            raise ValueError(f"component index out of range for state dimension {state_dim}")
        return [f"x{i}" for i in self.indices]

    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        self.names(states.shape[-1])
        return states[..., list(self.indices)]


@dataclass(frozen=True)
class CoarseGrid:
    """Every ``factor``-th grid point of a periodic field.

    With ``offsets=None`` all sub-grids are kept, stacked offset-major
    (channel ``j * n_coarse + i`` is ``u[factor * i + j]``), which is the
    layout :func:`augment` expects for shifting.
    """

    factor: int
    offsets: tuple | None = None

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("CoarseGrid factor must be >= 1")
        if self.offsets is not None:
            offs = tuple(int(o) for o in self.offsets)
            if any(o < 0 or o >= self.factor for o in offs):
                raise ValueError(f"offsets must lie in [0, {self.factor})")
            object.__setattr__(self, "offsets", offs)

    def _offsets(self):
        return tuple(range(self.factor)) if self.offsets is None else self.offsets

    def names(self, state_dim):
        if state_dim % self.factor:
            raise ValueError(f"factor {self.factor} does not divide grid size {state_dim}")
        nc = state_dim // self.factor
        return [f"u{j}_{i}" for j in self._offsets() for i in range(nc)]

    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        self.names(states.shape[-1])
        return np.concatenate([coarse_grain(states, self.factor, j) for j in self._offsets()], axis=-1)


ObservableDict = Monomials | RawComponents | CoarseGrid


def evaluate_observables(obs, states):
    """Apply an observable dictionary to states of shape (..., D)."""
    return obs(states)


def coarse_grain(snapshots, factor=4, offset=0):
    """Keep grid points ``factor * i + offset`` of fields on the last axis."""
    snapshots = np.asarray(snapshots, dtype=float)
    n = snapshots.shape[-1]
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide grid size {n}")
    if not 0 <= offset < factor:
        raise ValueError(f"offset must lie in [0, {factor}), got {offset}")
    return snapshots[..., offset::factor]


def build_data_matrix(trajectories, obs, delta, *, ergodic=False, window=None, attrs=None):
    """Evaluate observables along trajectories and arrange them as (N, M, K).

    Parameters
    ----------
    trajectories : array_like
        Ensemble mode: (N, K, D) states, one trajectory per row.
        Ergodic mode: a single (T, D) series, or several (R, T, D).
    obs : observable dictionary
    delta : float
    ergodic : bool
    window : int, optional
        Ergodic mode only. Cut each series into all ``T - window + 1``
        overlapping windows (stride 1) of length ``window``. When omitted
        each series becomes one row.

    Returns
    -------
    DataMatrix
    """
    traj = np.asarray(trajectories, dtype=float)
    if traj.size == 0:
        raise ValueError("no trajectories given")
    if ergodic:
        if traj.ndim == 2:
            traj = traj[None]
        if traj.ndim != 3:
            raise ValueError("ergodic input must be (T, D) or (R, T, D)")
    elif traj.ndim != 3:
        raise ValueError("ensemble input must be (N, K, D); trajectories must share length and dimension")
    names = obs.names(traj.shape[-1])
    g = obs(traj)                     # (R, T, M)
    if ergodic and window is not None:
        t = g.shape[1]
        if not 2 <= window <= t:
            raise ValueError(f"window {window} incompatible with series length {t}")
        w = np.lib.stride_tricks.sliding_window_view(g, window, axis=1)   # (R, T-w+1, M, w)
        values = w.reshape(-1, g.shape[2], window)
    else:
        values = g.transpose(0, 2, 1)
    return DataMatrix(np.ascontiguousarray(values), delta, names,
                      "ergodic" if ergodic else "ensemble", attrs or {})


# --------------------------------------------------------------------------
# KS symmetry augmentation


@dataclass(frozen=True)
class AugmentationSpec:
    shift: bool = False
    reorder: bool = False


def augment(D, spec):
    """Expand KS coarse-grid data by sub-grid shifting and cyclic rotation.

    ``D`` must carry ``attrs["subgrid_factor"] = F`` with its channels laid
    out as F offset-major blocks (see :class:`CoarseGrid`). With
    ``spec.shift`` each block becomes its own sample (N -> F N); otherwise
    only offset 0 is kept. With ``spec.reorder`` every sample is replaced by
    all cyclic rotations of its channels (N -> n_coarse N), the same
    rotation at every time index.

    Samples are ordered (original row, offset, rotation).
    """
    factor = int(D.attrs.get("subgrid_factor", 0))
    if factor < 1 or D.embedding != 1:
        raise ValueError("augmentation needs coarse-grid KS data with a subgrid_factor attribute")
    n, m, k = D.shape
    if m % factor:
        raise ValueError("channel count is not a multiple of subgrid_factor")
    nc = m // factor
    blocks = D.values.reshape(n, factor, nc, k)
    if not spec.shift:
        blocks = blocks[:, :1]
    v = blocks.reshape(-1, nc, k)
    if spec.reorder:
        idx = (np.arange(nc)[None, :] + np.arange(nc)[:, None]) % nc    # row r: rotation by r
        v = v[:, idx, :].reshape(-1, nc, k)
    names = [f"u{i}" for i in range(nc)]
    attrs = {key: val for key, val in D.attrs.items() if key != "subgrid_factor"}
    attrs["augmentation"] = {"shift": bool(spec.shift), "reorder": bool(spec.reorder)}
    return DataMatrix(v, D.delta, names, D.provenance, attrs)


# --------------------------------------------------------------------------
# delay embedding


def delay_embed(D, E):
    """Stack the current and E-1 previous snapshots as extra channels.

    Channel block ``e`` (``e = 0..E-1``) holds the snapshot lagged by ``e``,
    newest first, so the result has M*E channels and K-E+1 time indices.
    """
    E = int(E)
    if E < 1:
        raise ValueError("E must be >= 1")
    n, m, k = D.shape
    if E >= k:
        raise ValueError(f"embedding E={E} needs K > E (K={k})")
    if E == 1:
        return D
    kk = k - E + 1
    v = np.empty((n, m * E, kk))
    for e in range(E):
        v[:, e * m:(e + 1) * m, :] = D.values[:, :, E - 1 - e:E - 1 - e + kk]
    names = [f"{s}@{e}" for e in range(E) for s in D.observable_names]
    attrs = dict(D.attrs)
    attrs["embedding"] = E * D.embedding
    attrs["base_observables"] = list(D.observable_names)
    return DataMatrix(v, D.delta, names, D.provenance, attrs)


# --------------------------------------------------------------------------
# binary format


def write_binary(path, values, delta):
    """Write an (N, M, K) float64 array in the MZDM layout."""
    values = np.ascontiguousarray(values, dtype="<f8")
    n, m, k = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, m, k, float(delta)))
        values.tofile(fh)


def read_binary(path):
    """Read an MZDM file; returns (values, delta)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, m, k, delta = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not an MZDM file")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported MZDM version {version}")
        values = np.fromfile(fh, dtype="<f8", count=n * m * k)
    if values.size != n * m * k:
        raise ValueError(f"{path}: truncated data")
    return values.reshape(n, m, k).astype(np.float64, copy=False), delta


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_data_matrix(D, path):
    """Write ``path`` (binary) and ``path.json`` (names, provenance, attrs)."""
    path = Path(path)
    write_binary(path, D.values, D.delta)
    meta = {"format": "MZDM", "version": FORMAT_VERSION, "shape": list(D.shape),
            "delta": D.delta, "observable_names": list(D.observable_names),
            "provenance": D.provenance, "attrs": D.attrs}
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_data_matrix(path):
    path = Path(path)
    values, delta = read_binary(path)
    meta = json.loads(_sidecar(path).read_text())
    if list(values.shape) != meta["shape"]:
        raise ValueError(f"{path}: sidecar shape {meta['shape']} disagrees with binary {values.shape}")
    return DataMatrix(values, delta, meta["observable_names"], meta["provenance"], meta.get("attrs", {}))
