"""
Recovering plasma conditions and composition from one spectrum
==============================================================

Fits a small emulator, makes a noisy observation at a known setting, and
samples the posterior over (temperature, log density, sodium fraction).
A brute-force grid over the same posterior serves as a cross-check on the
sampler.

Run with ``python demos/calibrate_composition.py``.
"""

import numpy as np

from specal.calibration import (
    CalibrationProblem,
    histogram_marginal,
    run_mcmc,
    summarize,
    total_variation,
    zoomed_grid_posterior,
)
from specal.core import PARAMETER_NAMES, to_native
from specal.design import latin_hypercube
from specal.emulator import fit_bundle
from specal.reduction import build_basis, fit_standardization, log_transform, standardize
from specal.surrogate import NoiseModel, SurrogateConfig, add_noise, simulate, simulate_batch

cfg = SurrogateConfig(n_bins=512)
train = latin_hypercube(150, seed=1)
logX = log_transform(simulate_batch(train, cfg))
stats = fit_standardization(logX)
bundle = fit_bundle(train.points, build_basis(standardize(logX, stats), q=10), stats, seed=5)

# %%
# A synthetic observation
# -----------------------
# Precision 4 on the standardized scale is a noise sd of 0.5 per bin.
truth = np.array([0.62, 0.35, 0.27])
clean = standardize(log_transform(simulate(to_native(truth), cfg)), stats)
observed = add_noise(clean, NoiseModel(precision=4.0, seed=11))
problem = CalibrationProblem.from_spectrum(bundle, observed, precision=4.0)

# %%
# Posterior sampling
# ------------------
chain = run_mcmc(problem, 8000, seed=3)
print(f"acceptance rate {chain.acceptance_rate:.2f} after {chain.burn_in} burn-in steps")
summary = summarize(chain)
for j, name in enumerate(PARAMETER_NAMES):
    print(
        f"{name:>10}: truth {truth[j]:.3f}  mean {summary.mean[j]:.3f}  "
        f"90% [{summary.lower[j]:.3f}, {summary.upper[j]:.3f}]"
    )
print("posterior mean in native units:", to_native(summary.mean))

# %%
# Checking the sampler against a grid
# -----------------------------------
grid = zoomed_grid_posterior(problem, resolution=40)
for j, name in enumerate(PARAMETER_NAMES):
    tv = total_variation(histogram_marginal(chain.samples, grid, j), grid.marginal(j))
    print(f"{name:>10}: total variation to grid marginal {tv:.3f}")

# %%
# Pure elements
# -------------
# With no sodium (or no copper) at all, the posterior should pile up
# against the matching face of the cube.
for frac, label in ((1.0, "pure Na"), (0.0, "pure Cu")):
    point = np.array([0.5, 0.5, frac])
    y = add_noise(standardize(log_transform(simulate(to_native(point), cfg)), stats), NoiseModel(4.0, seed=12))
    ch = run_mcmc(CalibrationProblem.from_spectrum(bundle, y), 4000, seed=4)
    print(f"{label}: posterior mean sodium fraction {ch.samples[:, 2].mean():.3f}")
