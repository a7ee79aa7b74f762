"""Memory versus Markov-only prediction of the Van der Pol x coordinate.

Uses the vdp preset: 50 short limit-cycle trajectories observed through
x only, a fifth-order polynomial for every operator and 40 memory
terms. The rollout starts from the first 41 test snapshots.

    python3 demos/vdp_memory.py
"""

import numpy as np

from regmz.mzlearn import extract_operators, memory_norm_profile
from regmz.predict import MARKOV_ONLY, NONLINEAR_WITH_MEMORY, PredictionConfig, predict_nonlinear_memory
from regmz.presets import generate_states, resolve_config, tag_matrix, tag_setup

cfg = resolve_config(preset="vdp")
train, test = generate_states(cfg)
H = cfg["learn"]["memory_length"]
model = extract_operators(tag_matrix(cfg, "poly5", train), tag_setup("vdp", "poly5", {})["family"], H)

g = tag_matrix(cfg, "poly5", test).values[0].T           # (K, 1)
T, m = cfg["predict"]["history_steps"], cfg["predict"]["horizon_steps"]
truth = g[T:T + m, 0]
for mode in (NONLINEAR_WITH_MEMORY, MARKOV_ONLY):
    try:
        pred = predict_nonlinear_memory(model, g[:T], PredictionConfig(mode=mode, horizon=m))[:, 0]
        err = np.mean((pred - truth) ** 2)
        print(f"{mode:>22}: MSE over {m} steps {err:.3e}, max |x| {np.abs(pred).max():.2f}")
    except FloatingPointError as e:
        print(f"{mode:>22}: {e}")

profile = memory_norm_profile(model, tag_matrix(cfg, "poly5", test))
print("memory norm by lag:", np.array2string(profile[[0, 1, 5, 10, 20, 39]], precision=2))
