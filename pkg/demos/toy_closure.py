"""Linear versus nonlinear closure on the logistic toy model.

Learns the Markov operator on the dictionary [1, phi, phi^2] and the
quadratic Markov map on phi alone, then compares both 60-step
predictions against the exact solution of dphi/dt = phi - phi^2.

    python3 demos/toy_closure.py
"""

import numpy as np

from regmz.datamat import Monomials, RawComponents, build_data_matrix
from regmz.dynamics import ShiftedBeta, ToyLogistic, TrajectoryConfig, logistic_solution, sample_initial, simulate
from regmz.mzlearn import extract_operators
from regmz.predict import (
    LINEAR_WITH_MEMORY,
    MARKOV_ONLY,
    PredictionConfig,
    kappas_of,
    predict_linear_memory,
    predict_nonlinear_memory,
)
from regmz.regress import Linear, Polynomial

dt, K = 0.05, 61
traj = simulate(ToyLogistic(), TrajectoryConfig(dt, K), sample_initial(ShiftedBeta(), 10_000, seed=0))

kappa = kappas_of(extract_operators(build_data_matrix(traj, Monomials(2), dt), Linear(), 1))[0]
poly = extract_operators(build_data_matrix(traj, RawComponents((0,)), dt), Polynomial(2), 1)
np.set_printoptions(precision=3, suppress=True)
print("kappa on [1, phi, phi^2]:\n", kappa)
print("quadratic Markov map coefficients:", poly.operators[0].coef[:, 0])

phi0 = 1.4
times = dt * np.arange(1, K)
exact = logistic_solution(phi0, times)
lin = predict_linear_memory([kappa], [[1.0, phi0, phi0**2]],
                            PredictionConfig(mode=LINEAR_WITH_MEMORY, horizon=K - 1))[:, 1]
nonlin = predict_nonlinear_memory(poly, [[phi0]], PredictionConfig(mode=MARKOV_ONLY, horizon=K - 1))[:, 0]

print(f"\n{'t':>5} {'exact':>8} {'linear':>8} {'nonlinear':>10}")
for k in (0, 4, 9, 19, 39, 59):
    print(f"{times[k]:5.2f} {exact[k]:8.4f} {lin[k]:8.4f} {nonlin[k]:10.4f}")
print(f"\nmax error: linear {np.abs(lin - exact).max():.2e}, nonlinear {np.abs(nonlin - exact).max():.2e}")
