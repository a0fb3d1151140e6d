"""Posterior exploration of the unit-cube parameters given one observed spectrum.

The observation is projected onto the basis, ``w_obs = (K^T K)^{-1} K^T y``,
and compared with the emulator through

    w_obs | theta ~ N(mu_w(theta), (lambda_y K^T K)^{-1} + Sigma_w(theta))

Both covariance terms are diagonal, so the density is a sum of q univariate
normal log densities.  The prior is uniform on [0, 1]^3.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import (
    PARAMETER_NAMES,
    DomainError,
    NumericalError,
    Scale,
    SpecalError,
    Spectrum,
    require_scale,
    unit_to_native_array,
)
from .emulator import EmulatorBundle
from .reduction import project

BURN_IN_FRACTION = 0.2
TARGET_ACCEPTANCE = (0.2, 0.5)
_ADAPT_EVERY = 100
_MAX_PROPOSAL_SD = 0.15
_LOG_2PI = math.log(2.0 * math.pi)


class InitializationError(SpecalError, RuntimeError):
    """No starting point with positive posterior density could be found."""


@dataclass(frozen=True)
class CalibrationProblem:
    bundle: EmulatorBundle
    w_obs: np.ndarray
    precision: float = 4.0

    def __post_init__(self):
        w = np.array(self.w_obs, dtype=float)
        if w.shape != (self.bundle.q,):
            raise DomainError(f"w_obs must have length q={self.bundle.q}, got {w.shape}")
        if not self.precision > 0:
            raise DomainError("observation precision must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "w_obs", w)
        object.__setattr__(self, "precision", float(self.precision))

    @classmethod
    def from_spectrum(cls, bundle: EmulatorBundle, y: Spectrum, precision: float = 4.0):
        require_scale(y, Scale.STANDARDIZED, "observation")
        return cls(bundle, project(y, bundle.basis), precision)

    @property
    def ktk_diag(self) -> np.ndarray:
        return self.bundle.basis.ktk_diag

    @property
    def _live(self) -> np.ndarray:
        basis = self.bundle.basis
        return np.arange(basis.q) < basis.rank

    @property
    def observation_variance(self) -> np.ndarray:
        """Diagonal of ``(lambda_y K^T K)^{-1}`` (infinite on null directions)."""
        out = np.full(self.bundle.q, np.inf)
        live = self._live
        out[live] = 1.0 / (self.precision * self.ktk_diag[live])
        return out


def _loglik_from_moments(problem: CalibrationProblem, mean, var) -> np.ndarray:
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise NumericalError("emulator returned non-finite weight moments")
    live = problem._live
    total = problem.observation_variance[live] + var[:, live]
    resid = problem.w_obs[live] - mean[:, live]
    return -0.5 * np.sum(_LOG_2PI + np.log(total) + resid**2 / total, axis=1)


def log_likelihood_many(problem: CalibrationProblem, thetas) -> np.ndarray:
    mean, var = problem.bundle.predict_weights(thetas)
    return _loglik_from_moments(problem, mean, var)


def log_likelihood(problem: CalibrationProblem, theta) -> float:
    """Reduced-basis Gaussian log likelihood of ``problem.w_obs`` at ``theta``."""
    return float(log_likelihood_many(problem, np.asarray(theta, dtype=float)[None, :])[0])


def log_prior(theta) -> float | np.ndarray:
    """Independent uniforms on the closed unit cube."""
    t = np.asarray(theta, dtype=float)
    inside = np.all((t >= 0.0) & (t <= 1.0), axis=-1)
    out = np.where(inside, 0.0, -np.inf)
    return float(out) if out.ndim == 0 else out


def log_posterior_many(problem: CalibrationProblem, thetas) -> np.ndarray:
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    lp = log_prior(thetas)
    inside = np.isfinite(lp)
    if np.any(inside):
        lp[inside] += log_likelihood_many(problem, thetas[inside])
    return lp


@dataclass(frozen=True)
class Chain:
    samples: np.ndarray
    log_posterior: np.ndarray
    acceptance_rate: float
    seed: int
    burn_in: int

    def __len__(self) -> int:
        return self.samples.shape[0]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration",) + PARAMETER_NAMES + ("log_post",))
            for k, (row, lp) in enumerate(zip(self.samples, self.log_posterior)):
                w.writerow([self.burn_in + k] + [repr(float(v)) for v in row] + [repr(float(lp))])


def reflect(x: np.ndarray) -> np.ndarray:
    """Fold values back into [0, 1] by mirroring at the faces."""
    y = np.mod(x, 2.0)
    return np.where(y > 1.0, 2.0 - y, y)


_IMAGE_SIGNS = np.array(list(itertools.product((0, 1, 2), repeat=3)))


def _log_proposal_density(to, frm, prec):
    """Unnormalized log density of reflecting ``frm -> to`` (batched over chains).

    Sums the Gaussian kernel over the mirror images ``{y, -y, 2 - y}`` of
    every coordinate, which is exact up to images further than one unit away.
    """
    imgs = np.stack([to, -to, 2.0 - to], axis=-1)  # (B, p, 3)
    p = to.shape[1]
    z = imgs[:, np.arange(p), _IMAGE_SIGNS]  # (B, 27, p)
    d = z - frm[:, None, :]
    quad = np.einsum("bkp,bpr,bkr->bk", d, prec, d)
    return logsumexp(-0.5 * quad, axis=1)


def _initial_points(problems, bundle: EmulatorBundle) -> np.ndarray:
    design = np.asarray(bundle.inputs)
    mean, var = bundle.predict_weights(design)
    starts = []
    for pr in problems:
        lp = _loglik_from_moments(pr, mean, var)
        if not np.any(np.isfinite(lp)):
            raise InitializationError("no design point has positive posterior density")
        starts.append(design[int(np.argmax(lp))])
    return np.array(starts)


def run_mcmc_many(
    problems,
    n_samples: int,
    seeds,
    burn_in_fraction: float = BURN_IN_FRACTION,
    initial=None,
) -> list[Chain]:
    """Adaptive reflecting random-walk Metropolis, one chain per problem.

    All problems must share a bundle; the chains advance in lock step so the
    emulator is evaluated for every chain in one batched call.  Each chain
    draws only from its own ``default_rng(seed)`` stream.

    The first ``ceil(burn_in_fraction * n_samples)`` iterations adapt the
    proposal covariance (empirical covariance of the chain so far) and a
    global scale toward an acceptance rate in [0.2, 0.5]; they are then
    discarded and the proposal frozen, and ``n_samples`` further iterations
    are returned.  Because reflected correlated proposals are not symmetric,
    the acceptance ratio includes the proposal-density correction.
    """
    problems = list(problems)
    seeds = [int(s) for s in seeds]
    if not problems:
        return []
    if int(n_samples) != n_samples or n_samples < 1:
        raise DomainError(f"n_samples must be a positive integer, got {n_samples}")
    if len(seeds) != len(problems):
        raise DomainError("one seed per problem required")
    bundle = problems[0].bundle
    if any(pr.bundle is not bundle for pr in problems):
        raise DomainError("batched chains must share one emulator bundle")
    n_samples = int(n_samples)
    n_burn = int(math.ceil(burn_in_fraction * n_samples))
    n_total = n_burn + n_samples
    B, p = len(problems), bundle.inputs.shape[1]

    noise = np.empty((B, n_total, p))
    unif = np.empty((B, n_total))
    for b, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        noise[b] = rng.standard_normal((n_total, p))
        unif[b] = rng.random(n_total)
    log_u = np.log(unif)

    x = _initial_points(problems, bundle) if initial is None else np.array(initial, dtype=float)
    x = np.atleast_2d(x)

    # one row per chain; null directions get infinite variance and drop out
    live = problems[0]._live
    w_obs = np.stack([pr.w_obs[live] for pr in problems])
    obs_var = np.stack([pr.observation_variance[live] for pr in problems])

    def logpost(th):
        mean, var = bundle.predict_weights(th)
        total = obs_var + var[:, live]
        resid = w_obs - mean[:, live]
        ll = -0.5 * np.sum(_LOG_2PI + np.log(total) + resid**2 / total, axis=1)
        return ll + log_prior(th)

    lp = logpost(x)
    if not np.all(np.isfinite(lp)):
        raise InitializationError("initial points have zero posterior density")

    cov = np.tile(np.eye(p) * 0.02**2, (B, 1, 1))
    scale = np.ones(B)
    chol = np.linalg.cholesky(cov)
    prec = np.linalg.inv(cov)
    symmetric = True

    trace = np.empty((B, n_total, p))
    trace_lp = np.empty((B, n_total))
    accepted = np.zeros((B, n_total), dtype=bool)

    for i in range(n_total):
        step = scale[:, None] * np.einsum("bpr,br->bp", chol, noise[:, i])
        prop = reflect(x + step)
        lp_prop = logpost(prop)
        log_ratio = lp_prop - lp
        if not symmetric:
            sprec = prec / scale[:, None, None] ** 2
            log_ratio += _log_proposal_density(x, prop, sprec) - _log_proposal_density(prop, x, sprec)
        acc = log_u[:, i] < log_ratio
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_prop, lp)
        trace[:, i], trace_lp[:, i], accepted[:, i] = x, lp, acc

        if i < n_burn and (i + 1) % _ADAPT_EVERY == 0:
            rate = accepted[:, i + 1 - _ADAPT_EVERY : i + 1].mean(axis=1)
            scale *= np.exp(np.clip(rate - 0.3, -0.3, 0.3) * 3.0)
            if i + 1 >= 3 * _ADAPT_EVERY:
                recent = trace[:, (i + 1) // 2 : i + 1]
                for b in range(B):
                    c = np.cov(recent[b], rowvar=False) * (2.38**2 / p) + np.eye(p) * 1e-10
                    cov[b] = c
                chol = np.linalg.cholesky(cov)
                prec = np.linalg.inv(cov)
                symmetric = False
            # keep reflections to a single fold
            sd_max = scale * np.sqrt(np.max(np.diagonal(cov, axis1=1, axis2=2), axis=1))
            scale = np.where(sd_max > _MAX_PROPOSAL_SD, scale * _MAX_PROPOSAL_SD / sd_max, scale)

    chains = []
    for b in range(B):
        samples = trace[b, n_burn:].copy()
        lps = trace_lp[b, n_burn:].copy()
        samples.setflags(write=False)
        lps.setflags(write=False)
        chains.append(
            Chain(samples, lps, float(accepted[b, n_burn:].mean()), seeds[b], n_burn)
        )
    return chains


def run_mcmc(problem: CalibrationProblem, n_samples: int, seed: int = 0, **kw) -> Chain:
    return run_mcmc_many([problem], n_samples, [seed], **kw)[0]


@dataclass(frozen=True)
class GridPosterior:
    """Normalized posterior mass on the cells of a uniform grid over ``bounds``."""

    mass: np.ndarray
    log_density: np.ndarray
    bounds: np.ndarray

    @property
    def resolution(self) -> int:
        return self.mass.shape[0]

    def edges(self, j: int) -> np.ndarray:
        lo, hi = self.bounds[j]
        return np.linspace(lo, hi, self.resolution + 1)

    def centers(self, j: int) -> np.ndarray:
        e = self.edges(j)
        return 0.5 * (e[:-1] + e[1:])

    def marginal(self, j: int) -> np.ndarray:
        axes = tuple(k for k in range(self.mass.ndim) if k != j)
        return self.mass.sum(axis=axes)

    def argmax(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(self.log_density), self.mass.shape)
        return np.array([self.centers(j)[k] for j, k in enumerate(idx)])


def grid_posterior(
    problem: CalibrationProblem, resolution: int = 40, bounds=None, chunk: int = 4096
) -> GridPosterior:
    """Posterior evaluated at the cell centers of a ``resolution^3`` grid.

    ``bounds`` defaults to the unit cube; a smaller box is allowed when the
    posterior is known to sit inside it.  Normalization is done in log space.
    """
    if int(resolution) != resolution or resolution < 2:
        raise DomainError("grid resolution must be an integer >= 2")
    resolution = int(resolution)
    p = problem.bundle.inputs.shape[1]
    bounds = np.tile([0.0, 1.0], (p, 1)) if bounds is None else np.asarray(bounds, dtype=float)
    if bounds.shape != (p, 2) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise DomainError("bounds must be a (p, 2) array of increasing intervals")
    axes = []
    for lo, hi in bounds:
        e = np.linspace(lo, hi, resolution + 1)
        axes.append(0.5 * (e[:-1] + e[1:]))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    logd = np.empty(mesh.shape[0])
    for start in range(0, mesh.shape[0], chunk):
        logd[start : start + chunk] = log_posterior_many(problem, mesh[start : start + chunk])
    total = logsumexp(logd)
    if not np.isfinite(total):
        raise NumericalError("posterior has no mass on the grid")
    mass = np.exp(logd - total).reshape((resolution,) * p)
    return GridPosterior(mass, logd.reshape((resolution,) * p), bounds)


def zoomed_grid_posterior(
    problem: CalibrationProblem,
    resolution: int = 40,
    coarse: int = 20,
    tol: float = 1e-9,
    max_rounds: int = 6,
) -> GridPosterior:
    """Grid posterior on a box that holds all but ``tol`` of the mass.

    A coarse grid over the whole cube locates the mass; the box around
    every cell carrying more than ``tol`` (plus one cell of margin) is then
    gridded at ``resolution`` and widened until its outer cells, away from
    the cube faces, carry no more than ``tol``.
    """
    g = grid_posterior(problem, coarse)
    p = g.mass.ndim
    bounds = np.empty((p, 2))
    for j in range(p):
        marg = g.marginal(j)
        keep = np.flatnonzero(marg > tol)
        e = g.edges(j)
        width = e[1] - e[0]
        bounds[j] = max(0.0, e[keep[0]] - width), min(1.0, e[keep[-1] + 1] + width)
    for _ in range(max_rounds):
        g = grid_posterior(problem, resolution, bounds)
        grow = False
        for j in range(p):
            marg = g.marginal(j)
            width = bounds[j, 1] - bounds[j, 0]
            if bounds[j, 0] > 0.0 and marg[0] > tol:
                bounds[j, 0] = max(0.0, bounds[j, 0] - 0.25 * width)
                grow = True
            if bounds[j, 1] < 1.0 and marg[-1] > tol:
                bounds[j, 1] = min(1.0, bounds[j, 1] + 0.25 * width)
                grow = True
        if not grow:
            return g
    return g


def histogram_marginal(samples, grid: GridPosterior, j: int) -> np.ndarray:
    """Fraction of samples per grid cell along coordinate ``j``."""
    counts, _ = np.histogram(np.asarray(samples)[:, j], bins=grid.edges(j))
    return counts / len(samples)


def total_variation(p_hist, p_grid) -> float:
    """``0.5 * sum |a - b|``, counting histogram mass outside the grid box as mismatch."""
    p_hist, p_grid = np.asarray(p_hist), np.asarray(p_grid)
    outside = max(0.0, 1.0 - p_hist.sum())
    return 0.5 * (np.abs(p_hist - p_grid).sum() + outside)


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    native_mean: np.ndarray
    native_median: np.ndarray
    native_lower: np.ndarray
    native_upper: np.ndarray
    n_samples: int
    interval: float = 0.90

    def to_dict(self) -> dict:
        tail = round(0.5 * (1.0 - self.interval), 12)
        out = {"n_samples": self.n_samples, "interval": [tail, round(1.0 - tail, 12)]}
        for scale, prefix in (("unit", ""), ("native", "native_")):
            out[scale] = {
                name: {
                    stat: float(getattr(self, prefix + stat)[j])
                    for stat in ("mean", "median", "lower", "upper")
                }
                for j, name in enumerate(PARAMETER_NAMES)
            }
        return out


def summarize(chain: Chain, interval: float = 0.90) -> PosteriorSummary:
    """Mean, median and central interval per coordinate, in unit and native units."""
    s = np.asarray(chain.samples if isinstance(chain, Chain) else chain, dtype=float)
    if s.ndim != 2 or s.shape[0] == 0:
        raise DomainError("cannot summarize an empty chain")
    tail = 0.5 * (1.0 - interval)
    mean = s.mean(axis=0)
    median = np.median(s, axis=0)
    lower, upper = np.quantile(s, [tail, 1.0 - tail], axis=0)
    # quantiles commute with the increasing affine map; the mean is linear
    native = unit_to_native_array(np.clip(np.stack([mean, median, lower, upper]), 0.0, 1.0))
    return PosteriorSummary(
        mean, median, lower, upper, *native, n_samples=s.shape[0], interval=interval
    )
