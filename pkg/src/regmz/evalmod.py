"""Prediction-quality metrics: MSE against horizon, KL divergence of
marginals, spatial power spectra and long-time histograms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "mse_vs_horizon",
    "kl_divergence",
    "power_spectrum",
    "long_time_histogram",
    "Histogram",
    "EvalReport",
    "uniform_starts",
]


def mse_vs_horizon(pred, truth):
    """Mean over batch and observables of the squared error at each step.

    Parameters
    ----------
    pred, truth : ndarray, shape (B, m, M)

    Returns
    -------
    ndarray, shape (m,)
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.ndim != 3:
        raise ValueError("expected (B, m, M) arrays")
    d = pred - truth
    return np.mean(d * d, axis=(0, 2))


def kl_divergence(samples_true, samples_model, n_bins=100, eps=1e-9):
    """KL(p_true || p_model) of histograms on the union range.

    Both sample sets are binned on ``n_bins`` equal bins spanning the
    joint min/max; ``eps`` is added to every bin's probability mass
    before renormalizing.
    """
    a = np.ravel(np.asarray(samples_true, dtype=float))
    b = np.ravel(np.asarray(samples_model, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    p = np.histogram(a, edges)[0] / a.size + eps
    q = np.histogram(b, edges)[0] / b.size + eps
    p /= p.sum()
    q /= q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def power_spectrum(snapshots):
    """Batch-mean power of the unnormalized spatial DFT, wavenumbers 0..W/2.

    ``P[k] = mean_b |sum_x u_b(x) exp(-2 pi i k x / W)|^2``, with the
    interior wavenumbers 0 < k < W/2 doubled to account for the negative
    frequencies. Hence ``sum_k P[k] / W`` equals the batch mean of
    ``sum_x u(x)^2`` (Parseval), and a constant field ``c`` gives
    ``P[0] = (W c)^2``.
    """
    u = np.atleast_2d(np.asarray(snapshots, dtype=float))
    W = u.shape[-1]
    F = np.fft.rfft(u, axis=-1)
    P = np.mean(np.abs(F) ** 2, axis=tuple(range(u.ndim - 1)))
    if W % 2 == 0:
        P[1:-1] *= 2
    else:
        P[1:] *= 2
    return P


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    mass: np.ndarray          # fraction of samples per bin, sums to 1
    density: np.ndarray       # mass / bin width, integrates to 1

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def long_time_histogram(rollout, n_bins=100, range_=None):
    """Normalized histogram pooling every value of a rollout.

    For KS rollouts all grid points share the same marginal by
    translation symmetry, so pooling across channels is intended.
    """
    x = np.ravel(np.asarray(rollout, dtype=float))
    if x.size == 0:
        raise ValueError("empty rollout")
    if range_ is None:
        lo, hi = x.min(), x.max()
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = range_
    counts, edges = np.histogram(x, n_bins, (lo, hi))
    mass = counts / counts.sum()
    return Histogram(edges, mass, mass / np.diff(edges))


def uniform_starts(n_available, n_samples, seed=0):
    """Evenly spaced start indices with a seeded random phase."""
    if n_samples > n_available:
        raise ValueError("more samples requested than available")
    stride = n_available // n_samples
    phase = int(np.random.default_rng(seed).integers(stride))
    return phase + stride * np.arange(n_samples)


@dataclass
class EvalReport:
    """Metrics for one experiment/model pair."""

    mse_vs_horizon: np.ndarray = None
    kl_vs_horizon: np.ndarray = None
    spectrum: np.ndarray = None
    reference_spectrum: np.ndarray = None
    histograms: dict = field(default_factory=dict)
    deviations: np.ndarray = None
    scalars: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def write(self, directory, stem, delta=1.0):
        """Write ``stem_*.csv`` tables and ``stem_summary.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        h = self.config.get("config_hash")
        files = []

        def table(name, header, rows):
            p = d / f"{stem}_{name}.csv"
            with open(p, "w", newline="") as fh:
                if h:
                    fh.write(f"# config_hash={h}\n")
                w = csv.writer(fh)
                w.writerow(header)
                for r in rows:
                    w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
            files.append(p.name)

        if self.mse_vs_horizon is not None:
            m = np.asarray(self.mse_vs_horizon)
            table("mse", ["step", "time", "mse"], [(i + 1, (i + 1) * delta, v) for i, v in enumerate(m)])
        if self.kl_vs_horizon is not None:
            k = np.asarray(self.kl_vs_horizon)
            table("kl", ["step", "time", "kl"], [(i + 1, (i + 1) * delta, v) for i, v in enumerate(k)])
        if self.spectrum is not None:
            spec = np.asarray(self.spectrum)
            if self.reference_spectrum is None:
                table("spectrum", ["wavenumber", "power"], list(enumerate(spec)))
            else:
                ref = np.asarray(self.reference_spectrum)
                table("spectrum", ["wavenumber", "power", "reference_power"],
                      [(k, a, b) for k, (a, b) in enumerate(zip(spec, ref))])
        for name, hist in self.histograms.items():
            table(f"hist_{name}", ["center", "density"], zip(hist.centers, hist.density))
        if self.deviations is not None:
            dev = np.asarray(self.deviations)
            table("deviations", ["step"] + [f"rollout{j}" for j in range(dev.shape[0])],
                  [[i + 1] + list(dev[:, i]) for i in range(dev.shape[1])])
        summary = {"config": self.config, "scalars": self.scalars, "files": files}
        (d / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return files
