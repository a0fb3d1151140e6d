"""
Emulating synthetic emission spectra
====================================

Walks through the emulator half of the workflow on a reduced problem that
runs in well under a minute: design, simulate, reduce, fit, and score the
emulator on held-out runs.

Run with ``python demos/emulate_spectra.py``.
"""

import time

import numpy as np

from specal.core import to_native
from specal.design import latin_hypercube
from specal.emulator import emulate_spectrum, fit_bundle
from specal.evaluation import emulator_report
from specal.reduction import build_basis, fit_standardization, log_transform, project, standardize
from specal.surrogate import SurrogateConfig, simulate_batch

# A coarser grid and a smaller design than the default keep this quick.
cfg = SurrogateConfig(n_bins=512)
train = latin_hypercube(150, seed=1)
test = latin_hypercube(25, seed=2, kind="test")

# %%
# Simulate and move to the standardized log scale
# -----------------------------------------------
# Raw intensities span several decades, so the emulator works with
# log spectra, centred per bin and divided by one scalar spread.
raw = simulate_batch(train, cfg)
print(f"raw intensity range: {raw.matrix.min():.3g} .. {raw.matrix.max():.3g}")

logX = log_transform(raw)
stats = fit_standardization(logX)
Xstd = standardize(logX, stats)

# %%
# Reduce to a handful of principal-component weights
# --------------------------------------------------
basis = build_basis(Xstd, q=10)
ve = basis.variance_explained
for q in (1, 3, 5, 10):
    print(f"q={q:2d}: {100 * ve[q - 1]:.4f}% of variance")

# %%
# One Gaussian process per weight
# -------------------------------
t0 = time.perf_counter()
bundle = fit_bundle(train.points, basis, stats, seed=5)
print(f"fitted {bundle.q} emulators in {time.perf_counter() - t0:.1f}s")
for em in bundle.emulators[:3]:
    print(f"  weight {em.index}: length scales {np.round(em.hyper.length_scales, 3)}")

# %%
# Held-out accuracy
# -----------------
truth = standardize(log_transform(simulate_batch(test, cfg)), stats)
mean, _ = bundle.predict_weights(test.points)
report = emulator_report(basis.K @ mean.T, truth.matrix, stats, test.points)
print(f"cells within 2%: {100 * report.fraction_within(2.0):.1f}%")
print(f"bins with R^2 > 0.9: {100 * report.fraction_r2_above(0.9):.1f}%")

# How much of the remaining error is truncation rather than emulation?
w_true = project(truth, basis)
trunc = basis.K @ w_true - truth.matrix
emul = basis.K @ (mean.T - w_true)
print(f"rms truncation error {np.sqrt(np.mean(trunc**2)):.2e}, rms emulation error {np.sqrt(np.mean(emul**2)):.2e}")

# %%
# A single emulated spectrum, back in native units
# ------------------------------------------------
theta = test.points[0]
spec, pred = emulate_spectrum(bundle, theta)
print(to_native(theta))
strongest = np.argsort(spec.intensity)[-3:][::-1]
for i in strongest:
    print(f"  {spec.grid.values[i]:7.2f} nm  log I = {spec.intensity[i]:.3f}")
