"""Experiment presets and the generate / learn / predict / evaluate pipeline.

A preset is a nested configuration (sections ``experiment``, ``data``,
``learn``, ``models``, ``predict``, ``evaluate``) resolved for a scale
(``desk`` or ``paper``). Every artifact written by the pipeline records
the hash of the resolved configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .datamat import (
    AugmentationSpec,
    CoarseGrid,
    DataMatrix,
    Monomials,
    RawComponents,
    augment,
    build_data_matrix,
    delay_embed,
    load_data_matrix,
    save_data_matrix,
)
from .dynamics import (
    KuramotoSivashinsky,
    Lorenz63,
    ShiftedBeta,
    ToyLogistic,
    TrajectoryConfig,
    VanDerPol,
    ks_initial_field,
    limit_cycle,
    sample_initial,
    simulate,
)
from .evalmod import EvalReport, kl_divergence, long_time_histogram, mse_vs_horizon, power_spectrum, uniform_starts
from .mzlearn import (
    extract_operators,
    gfd_check,
    load_mz_model,
    memory_norm_profile,
    save_mz_model,
    select_memory_length,
)
from .predict import (
    LINEAR_WITH_MEMORY,
    MARKOV_ONLY,
    NONLINEAR_WITH_MEMORY,
    GaussianIID,
    PredictionConfig,
    PredictionDiverged,
    ZeroNoise,
    fit_gaussian_noise,
    kappas_of,
    predict_linear_memory,
    predict_nonlinear_memory,
    write_prediction_csv,
)
from .regress import Conv1d, Linear, Mlp, Polynomial, SplineRidge, TrainerConfig

log = logging.getLogger(__name__)

PRESETS = ("toy", "vdp", "lorenz63", "ks")
SCALES = ("desk", "paper")


class ConfigError(ValueError):
    pass


class HashMismatch(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


def _model(**kw):
    base = {"optimizer": "closed_form", "max_iter": 1000, "epochs": 500, "pool_stride": 1, "gfd": False}
    base.update(kw)
    return base


def preset_config(name, scale="desk"):
    """Default configuration of a preset at the given scale."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r} (choose desk or paper)")
    desk = scale == "desk"
    exp = {"preset": name, "scale": scale, "seed": 0}
    if name == "toy":
        return {
            "experiment": exp,
            "data": {"n_trajectories": 10**4 if desk else 10**5, "n_test_trajectories": 1000,
                     "n_snapshots": 61, "delta_time": 0.05, "inner_dt_time": 5e-4},
            "learn": {"tags": ["mori2", "poly2"], "memory_length": 1, "keep_residuals": "all"},
            "models": {"mori2": _model(gfd=True), "poly2": _model(gfd=True)},
            "predict": {"n_rollouts": 1000, "history_steps": 1, "horizon_steps": 60, "noise": "zero",
                        "long_horizon_steps": 0},
            "evaluate": {"kl_bins": 100, "kl_epsilon": 1e-9, "profile_threshold": 1e-7},
        }
    if name == "vdp":
        return {
            "experiment": exp,
            "data": {"mu": 1.0, "n_trajectories": 50, "n_snapshots": 41, "delta_time": 0.5,
                     "inner_dt_time": 1e-3, "relax_time": 100.0, "test_burn_in_time": 100.0,
                     "test_snapshots": 321},
            "learn": {"tags": ["mori1", "mori5", "poly5"], "memory_length": 40, "keep_residuals": "all"},
            "models": {"mori1": _model(gfd=True), "mori5": _model(gfd=True), "poly5": _model(gfd=True)},
            "predict": {"n_rollouts": 1, "history_steps": 41, "horizon_steps": 280, "noise": "zero",
                        "long_horizon_steps": 0},
            "evaluate": {"kl_bins": 100, "kl_epsilon": 1e-9, "profile_threshold": 1e-7},
        }
    if name == "lorenz63":
        return {
            "experiment": exp,
            "data": {"n_snapshots": 10**5 if desk else 10**6, "test_snapshots": 10**5 if desk else 10**6,
                     "delta_time": 0.01, "inner_dt_time": 1e-3, "burn_in_time": 1000.0},
            "learn": {"tags": ["mori1", "mori5", "poly5", "spline", "mlp"], "memory_length": 500,
                      "keep_residuals": "first"},
            "models": {"mori1": _model(), "mori5": _model(), "poly5": _model(), "spline": _model(),
                       "mlp": _model(optimizer="lbfgs", max_iter=200, pool_stride=10 if desk else 1)},
            "predict": {"n_rollouts": 50 if desk else 1000, "history_steps": 500, "horizon_steps": 300,
                        "noise": "zero", "long_horizon_steps": 150000, "long_history_time": 50.0},
            "evaluate": {"kl_bins": 100, "kl_epsilon": 1e-9, "profile_threshold": 1e-7,
                         "terminal_steps": 150},
        }
    return {
        "experiment": exp,
        "data": {"n_snapshots": 10**4 if desk else 10**5, "test_snapshots": 10**4 if desk else 10**5,
                 "delta_time": 1.0, "inner_dt_time": 1e-3, "burn_in_time": 500.0, "subgrid_factor": 4},
        "learn": {"tags": ["mori_dem", "fcnn", "cnn", "cnn_dem"], "memory_length": 4 if desk else 10,
                  "keep_residuals": "first"},
        "models": {
            "mori_dem": _model(embedding=10, shift=True, reorder=not desk),
            "fcnn": _model(optimizer="lbfgs", max_iter=300, pool_stride=16 if desk else 1,
                           shift=True, reorder=True),
            "cnn": _model(optimizer="lbfgs", max_iter=300, pool_stride=4 if desk else 1,
                          shift=True, reorder=False),
            "cnn_dem": _model(optimizer="lbfgs", max_iter=300, pool_stride=4 if desk else 1,
                              embedding=4, shift=True, reorder=False),
        },
        "predict": {"n_rollouts": 200 if desk else 15000, "history_steps": 10, "horizon_steps": 100,
                    "noise": "zero", "long_horizon_steps": 3000 if desk else 15000},
        "evaluate": {"kl_bins": 100, "kl_epsilon": 1e-9, "profile_threshold": 1e-7},
    }


def _merge(base, override, prefix=""):
    for key, val in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {name!r} must be a section")
            _merge(base[key], val, name + ".")
        else:
            if isinstance(val, dict):
                raise ConfigError(f"config key {name!r} is not a section")
            base[key] = val


def resolve_config(user=None, preset=None, scale=None, seed=None):
    """Preset defaults overlaid with a user configuration and CLI flags.

    Unknown keys raise :class:`ConfigError` naming the key.
    """
    user = copy.deepcopy(user or {})
    exp = user.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("config key 'experiment' must be a section")
    name = preset or exp.get("preset")
    if name is None:
        raise ConfigError("no preset given (use --preset or experiment.preset)")
    sc = scale or exp.get("scale", "desk")
    cfg = preset_config(name, sc)
    _merge(cfg, user)
    cfg["experiment"]["preset"] = name
    cfg["experiment"]["scale"] = sc
    if seed is not None:
        cfg["experiment"]["seed"] = int(seed)
    for tag in cfg["learn"]["tags"]:
        if tag not in cfg["models"]:
            raise ConfigError(f"model tag {tag!r} is not available for preset {name!r}")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:          # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_config(directory):
    p = Path(directory) / "config.json"
    if not p.exists():
        raise FileNotFoundError(f"{p} not found")
    return json.loads(p.read_text())


# --------------------------------------------------------------------------
# model tags


def _trainer(mcfg, seed):
    return TrainerConfig(optimizer=mcfg["optimizer"], max_iter=mcfg["max_iter"], epochs=mcfg["epochs"],
                         seed=seed)


def tag_setup(preset, tag, mcfg, seed=0):
    """Observable dictionary, family, prediction mode and compared column of a tag.

    Returns a dict with keys ``obs``, ``family``, ``mode``, ``column``
    (index of the resolved variable among the outputs, or None for all).
    """
    state0 = (0,)
    if tag in ("mori1", "mori2", "mori5"):
        deg = int(tag[-1])
        return {"obs": Monomials(deg, components=state0), "family": Linear(),
                "mode": LINEAR_WITH_MEMORY, "column": 1}
    if tag in ("poly2", "poly5"):
        return {"obs": RawComponents(state0), "family": Polynomial(int(tag[-1])),
                "mode": NONLINEAR_WITH_MEMORY, "column": 0}
    if tag == "spline":
        return {"obs": RawComponents(state0), "family": SplineRidge(),
                "mode": NONLINEAR_WITH_MEMORY, "column": 0}
    if tag == "mlp":
        return {"obs": RawComponents(state0), "family": Mlp((5, 5), trainer=_trainer(mcfg, seed)),
                "mode": NONLINEAR_WITH_MEMORY, "column": 0}
    if tag == "mori_dem":
        return {"obs": None, "family": Linear(), "mode": LINEAR_WITH_MEMORY, "column": None}
    if tag == "fcnn":
        return {"obs": None, "family": Mlp((32, 32), trainer=_trainer(mcfg, seed)),
                "mode": NONLINEAR_WITH_MEMORY, "column": None}
    if tag in ("cnn", "cnn_dem"):
        return {"obs": None, "family": Conv1d(n_layers=2, channels=5, kernel_size=11, circular=True,
                                              trainer=_trainer(mcfg, seed)),
                "mode": NONLINEAR_WITH_MEMORY, "column": None}
    raise ConfigError(f"unknown model tag {tag!r}")


# --------------------------------------------------------------------------
# generate


def _system(cfg):
    p = cfg["experiment"]["preset"]
    if p == "toy":
        return ToyLogistic()
    if p == "vdp":
        return VanDerPol(cfg["data"]["mu"])
    if p == "lorenz63":
        return Lorenz63()
    return KuramotoSivashinsky()


def generate_states(cfg):
    """Raw train/test state matrices for a configuration."""
    p = cfg["experiment"]["preset"]
    d = cfg["data"]
    seed = cfg["experiment"]["seed"]
    spec = _system(cfg)
    if p == "toy":
        tc = TrajectoryConfig(d["delta_time"], d["n_snapshots"], inner_dt=d["inner_dt_time"])
        train = simulate(spec, tc, sample_initial(ShiftedBeta(), d["n_trajectories"], seed=seed))
        test = simulate(spec, tc, sample_initial(ShiftedBeta(), d["n_test_trajectories"], seed=seed + 1))
        ergodic = False
    elif p == "vdp":
        lc = limit_cycle(spec, t_relax=d["relax_time"], inner_dt=d["inner_dt_time"])
        x0 = sample_initial(lc, d["n_trajectories"])
        train = simulate(spec, TrajectoryConfig(d["delta_time"], d["n_snapshots"], inner_dt=d["inner_dt_time"]), x0)
        test = simulate(spec, TrajectoryConfig(d["delta_time"], d["test_snapshots"], burn_in=d["test_burn_in_time"],
                                               inner_dt=d["inner_dt_time"]), [0.0, 1.0])[None]
        ergodic = False
    elif p == "lorenz63":
        def run(n, x0):
            tc = TrajectoryConfig(d["delta_time"], n, burn_in=d["burn_in_time"], inner_dt=d["inner_dt_time"])
            return simulate(spec, tc, x0)[None]
        train = run(d["n_snapshots"], [0.01, 1.0, 10.0])
        test = run(d["test_snapshots"], [0.0, 1.0, 2.0])
        ergodic = True
    else:
        def run(n, which):
            tc = TrajectoryConfig(d["delta_time"], n, burn_in=d["burn_in_time"], inner_dt=d["inner_dt_time"])
            return simulate(spec, tc, ks_initial_field(spec, which))[None]
        train = run(d["n_snapshots"], "train")
        test = run(d["test_snapshots"], "test")
        ergodic = True
    out = []
    for states in (train, test):
        raw = RawComponents(tuple(range(states.shape[-1])))
        out.append(build_data_matrix(states, raw, d["delta_time"], ergodic=ergodic))
    return out


def _attrs(cfg, **extra):
    a = {"config_hash": config_hash(cfg), "preset": cfg["experiment"]["preset"],
         "scale": cfg["experiment"]["scale"], "seed": cfg["experiment"]["seed"]}
    a.update(extra)
    return a


def cmd_generate(cfg, out, tag=None):
    """Write ``config.json``, ``train.mzdm`` and ``test.mzdm`` (raw states).

    With ``tag`` the observable matrices of that tag are written as well.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    train, test = generate_states(cfg)
    files = []
    for role, D in (("train", train), ("test", test)):
        D = D.replace(attrs=_attrs(cfg, role=role))
        files.append(save_data_matrix(D, out / f"{role}.mzdm"))
    if tag is not None:
        for role, D in (("train", train), ("test", test)):
            Dt = tag_matrix(cfg, tag, D, augmented=False).replace(attrs=_attrs(cfg, role=role, tag=tag))
            files.append(save_data_matrix(Dt, out / f"{role}_{tag}.mzdm"))
    return files


# --------------------------------------------------------------------------
# learn


def tag_matrix(cfg, tag, states, augmented=True):
    """The data matrix a tag learns from, built from raw states."""
    p = cfg["experiment"]["preset"]
    mcfg = cfg["models"][tag]
    setup = tag_setup(p, tag, mcfg)
    series = states.values.transpose(0, 2, 1)                     # (N, K, D)
    ergodic = states.provenance == "ergodic"
    if p != "ks":
        return build_data_matrix(series, setup["obs"], states.delta, ergodic=ergodic)
    f = cfg["data"]["subgrid_factor"]
    D = build_data_matrix(series, CoarseGrid(f), states.delta, ergodic=ergodic, attrs={"subgrid_factor": f})
    if augmented:
        D = augment(D, AugmentationSpec(shift=mcfg["shift"], reorder=mcfg["reorder"]))
    else:
        D = augment(D, AugmentationSpec())
    return delay_embed(D, mcfg.get("embedding", 1))


def _profile_columns(cfg, tag):
    col = tag_setup(cfg["experiment"]["preset"], tag, cfg["models"][tag])["column"]
    return None if col is None else [col]


def cmd_learn(cfg, data_dir, tag, out, H=None, progress=None):
    """Extract a model and write it with ``diagnostics.csv`` and ``learn_summary.json``."""
    if tag not in cfg["models"]:
        raise ConfigError(f"model tag {tag!r} is not available for preset {cfg['experiment']['preset']!r}")
    data_dir, out = Path(data_dir), Path(out)
    h = config_hash(cfg)
    train = load_data_matrix(data_dir / "train.mzdm")
    test = load_data_matrix(data_dir / "test.mzdm")
    _check_hash(h, train.attrs.get("config_hash"), "training data")
    mcfg = cfg["models"][tag]
    seed = cfg["experiment"]["seed"]
    setup = tag_setup(cfg["experiment"]["preset"], tag, mcfg, seed)
    D = tag_matrix(cfg, tag, train)
    H = H or cfg["learn"]["memory_length"]
    model = extract_operators(D, setup["family"], H, seed=seed, keep_residuals=cfg["learn"]["keep_residuals"],
                              pool_stride=mcfg["pool_stride"], progress=progress)
    model.attrs = _attrs(cfg, tag=tag)
    save_mz_model(model, out)

    D_test = tag_matrix(cfg, tag, test, augmented=False)
    profile = memory_norm_profile(model, D_test, components=_profile_columns(cfg, tag))
    thr = cfg["evaluate"]["profile_threshold"]
    gfd = gfd_check(model, D) if mcfg["gfd"] else None
    col = setup["column"]
    rows = []
    for n in range(model.H):
        row = [n, model.diagnostics["fit_mse"][n], profile[n]]
        if col is not None:
            row.append(model.diagnostics["component_mse"][n][col])
        if gfd is not None:
            row += [gfd.orthogonality[n], gfd.residual_rms[n], gfd.replay[n - 1] if n >= 1 else 0.0]
        rows.append(row)
    header = ["order", "fit_mse", "memory_norm"] + (["resolved_fit_mse"] if col is not None else []) + (["gfd_orthogonality", "residual_rms", "gfd_replay"]
                                                    if gfd is not None else [])
    _write_table(out / "diagnostics.csv", header, rows, h)
    write_json(out / "learn_summary.json", {
        "config_hash": h, "tag": tag, "H": model.H, "selected_H": select_memory_length(profile, thr),
        "threshold": thr,
    })
    return model


def _write_table(path, header, rows, h):
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _check_hash(expected, found, what, force=False):
    if found != expected:
        msg = f"config hash mismatch: {what} has {found}, expected {expected}"
        if not force:
            raise HashMismatch(msg + " (use --force to override)")
        log.warning(msg)


# --------------------------------------------------------------------------
# predict


def _histories(cfg, tag, test):
    """(histories, truth, starts, times) for the configured rollouts."""
    p = cfg["experiment"]["preset"]
    pc = cfg["predict"]
    mcfg = cfg["models"][tag]
    setup = tag_setup(p, tag, mcfg)
    series = test.values.transpose(0, 2, 1)
    if p == "ks":
        f = cfg["data"]["subgrid_factor"]
        g = build_data_matrix(series, CoarseGrid(f, offsets=(0,)), test.delta, ergodic=True).values.transpose(0, 2, 1)
    else:
        g = build_data_matrix(series, setup["obs"], test.delta, ergodic=test.provenance == "ergodic").values
        g = g.transpose(0, 2, 1)
    T, m = pc["history_steps"], pc["horizon_steps"]
    seed = cfg["experiment"]["seed"]
    if p in ("toy", "vdp"):
        n = min(pc["n_rollouts"], g.shape[0])
        starts = np.zeros(n, dtype=int)
        hist = g[:n, :T]
        truth = g[:n, T:T + m]
    else:
        K = g.shape[1]
        st = T + uniform_starts(K - T - m, pc["n_rollouts"], seed)
        starts = st - T
        hist = np.stack([g[0, s - T:s] for s in st])
        truth = np.stack([g[0, s:s + m] for s in st])
    return g, hist, truth, starts


def _rollout(model, setup, hist, horizon, mode, noise, seed):
    cfg = PredictionConfig(mode=mode, horizon=horizon, noise=noise, seed=seed)
    if mode == LINEAR_WITH_MEMORY:
        return predict_linear_memory(kappas_of(model), hist, cfg)
    return predict_nonlinear_memory(model, hist, cfg)


def _noise(cfg, model):
    kind = cfg["predict"]["noise"]
    if kind == "zero":
        return ZeroNoise()
    if kind == "gaussian":
        if 0 not in model.residual_orders:
            raise ConfigError("gaussian noise needs the order-0 residuals (learn.keep_residuals)")
        return GaussianIID(*fit_gaussian_noise(model.residual(0)))
    raise ConfigError(f"unknown noise model {kind!r}")


def cmd_predict(cfg, model_dir, data_dir, out, mode=None, force=False):
    """Roll out the model from test histories; returns the number of diverged rollouts.

    Writes ``pred.mzdm`` (B, d, m), one ``rollout_NNNN.csv`` per history
    and, when configured, ``long.mzdm`` for a single long rollout.
    """
    model_dir, data_dir, out = Path(model_dir), Path(data_dir), Path(out)
    h = config_hash(cfg)
    model = load_mz_model(model_dir)
    test = load_data_matrix(data_dir / "test.mzdm")
    _check_hash(h, model.attrs.get("config_hash"), "model", force)
    _check_hash(h, test.attrs.get("config_hash"), "test data", force)
    tag = model.attrs["tag"]
    setup = tag_setup(cfg["experiment"]["preset"], tag, cfg["models"][tag])
    mode = mode or setup["mode"]
    if mode == "markov":
        mode = MARKOV_ONLY
    if mode == MARKOV_ONLY and setup["mode"] == LINEAR_WITH_MEMORY:
        model = model.truncated(1)
        mode = LINEAR_WITH_MEMORY
    noise = _noise(cfg, model)
    seed = cfg["experiment"]["seed"]
    pc = cfg["predict"]
    g, hist, truth, starts = _histories(cfg, tag, test)
    out.mkdir(parents=True, exist_ok=True)

    n_div = 0
    preds = np.full(truth.shape, np.nan)
    diverged = np.zeros(len(hist), dtype=bool)
    try:
        preds[:] = _rollout(model, setup, hist, pc["horizon_steps"], mode, noise, seed)
    except PredictionDiverged:
        # redo one by one to keep every healthy rollout
        for b in range(len(hist)):
            try:
                preds[b] = _rollout(model, setup, hist[b], pc["horizon_steps"], mode, noise, seed + b)
            except PredictionDiverged as e:
                preds[b] = e.partial
                diverged[b] = True
        n_div = int(diverged.sum())
    names = _output_names(cfg, tag, model, g.shape[-1])
    delta = test.delta
    T = pc["history_steps"]
    base_t = cfg["data"].get("test_burn_in_time", 0.0)
    for b in range(len(hist)):
        t0 = base_t + (starts[b] + T - 1) * delta
        times = t0 + delta * np.arange(1, pc["horizon_steps"] + 1)
        write_prediction_csv(out / f"rollout_{b:04d}.csv", times, preds[b], names, h)
    attrs = _attrs(cfg, tag=tag, mode=mode, starts=[int(s) for s in starts],
                   diverged=[int(i) for i in np.nonzero(diverged)[0]])
    save_data_matrix(DataMatrix(np.nan_to_num(preds, nan=0.0).transpose(0, 2, 1), delta, names, attrs=attrs),
                     out / "pred.mzdm")

    if pc["long_horizon_steps"] > 0:
        L = int(round(pc.get("long_history_time", pc["history_steps"] * delta) / delta)) + 1
        L = max(L, pc["history_steps"])
        long_hist = g[0, :L]
        try:
            long = _rollout(model, setup, long_hist, pc["long_horizon_steps"], mode, noise, seed)
            long_div, valid = False, pc["long_horizon_steps"]
        except PredictionDiverged as e:
            long, long_div, valid = e.partial, True, int(e.step)
            n_div += 1
        attrs = _attrs(cfg, tag=tag, mode=mode, history_steps=L, diverged=bool(long_div), valid_steps=valid)
        save_data_matrix(DataMatrix(np.nan_to_num(long, nan=0.0).T[None], delta, names, attrs=attrs),
                         out / "long.mzdm")
    return n_div


def _output_names(cfg, tag, model, width):
    names = list(model.observable_names[: model.output_dim])
    if len(names) != width:
        names = [f"g{i}" for i in range(width)]
    return names


# --------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg, model_dir, data_dir, pred_dir, out, force=False):
    """Compare predictions with the test data and write an EvalReport."""
    model_dir, data_dir, pred_dir = Path(model_dir), Path(data_dir), Path(pred_dir)
    h = config_hash(cfg)
    man = json.loads((model_dir / "manifest.json").read_text())
    test = load_data_matrix(data_dir / "test.mzdm")
    pred = load_data_matrix(pred_dir / "pred.mzdm")
    _check_hash(h, man["attrs"].get("config_hash"), "model", force)
    _check_hash(h, test.attrs.get("config_hash"), "test data", force)
    _check_hash(h, pred.attrs.get("config_hash"), "predictions", force)
    tag = man["attrs"]["tag"]
    ev = cfg["evaluate"]
    col = tag_setup(cfg["experiment"]["preset"], tag, cfg["models"][tag])["column"]
    g, _, truth, starts = _histories(cfg, tag, test)
    if list(pred.attrs.get("starts", [])) != [int(s) for s in starts]:
        raise HashMismatch("prediction start indices do not match the configuration")
    P = pred.values.transpose(0, 2, 1)
    sel = slice(None) if col is None else [col]
    p, t = P[:, :, sel], truth[:, :, sel]
    rep = EvalReport(config={"config_hash": h, "tag": tag, "preset": cfg["experiment"]["preset"],
                             "diverged": pred.attrs.get("diverged", [])})
    rep.mse_vs_horizon = mse_vs_horizon(p, t)
    rep.kl_vs_horizon = np.array([kl_divergence(t[:, k], p[:, k], ev["kl_bins"], ev["kl_epsilon"])
                                  for k in range(t.shape[1])])
    rep.deviations = np.sqrt(np.sum((p - t) ** 2, axis=2))
    rep.scalars["mse_step1"] = float(rep.mse_vs_horizon[0])
    data_var = float(np.var(g[..., sel]))
    rep.scalars["data_variance"] = data_var

    long_path = pred_dir / "long.mzdm"
    if long_path.exists():
        long = load_data_matrix(long_path)
        _check_hash(h, long.attrs.get("config_hash"), "long rollout", force)
        # a diverged rollout is scored on its finite prefix only
        valid = int(long.attrs.get("valid_steps", long.shape[2]))
        L = long.values[0].T[:valid, sel]                         # (steps, d)
        ref = g[0][:, sel]
        lo, hi = min(L.min(), ref.min()), max(L.max(), ref.max())
        rep.histograms["prediction"] = long_time_histogram(L, ev["kl_bins"], (lo, hi))
        rep.histograms["truth"] = long_time_histogram(ref, ev["kl_bins"], (lo, hi))
        rep.scalars["long_kl"] = kl_divergence(ref, L, ev["kl_bins"], ev["kl_epsilon"])
        n_term = ev.get("terminal_steps", 0)
        if n_term:
            rep.scalars["terminal_variance_fraction"] = float(np.var(L[-n_term:]) / data_var)
        rep.scalars["long_diverged"] = bool(long.attrs.get("diverged", False))
        rep.scalars["long_valid_steps"] = valid
        if cfg["experiment"]["preset"] == "ks":
            rep.spectrum = power_spectrum(L)
            rep.reference_spectrum = power_spectrum(ref)
    stem = f"{cfg['experiment']['preset']}_{tag}"
    rep.write(out, stem, delta=test.delta)
    return rep


# --------------------------------------------------------------------------
# reproduce


def cmd_reproduce(cfg, out, tags=None, progress=None):
    out = Path(out)
    tags = tags or cfg["learn"]["tags"]
    for tag in tags:
        if tag not in cfg["models"]:
            raise ConfigError(f"model tag {tag!r} is not available for preset {cfg['experiment']['preset']!r}")
    data = out / "data"
    cmd_generate(cfg, data)
    n_div = 0
    for tag in tags:
        if progress:
            progress(f"learning {tag}")
        cmd_learn(cfg, data, tag, out / "models" / tag)
        if progress:
            progress(f"predicting {tag}")
        n_div += cmd_predict(cfg, out / "models" / tag, data, out / "predictions" / tag)
        cmd_evaluate(cfg, out / "models" / tag, data, out / "predictions" / tag, out / "evaluation")
    return n_div
