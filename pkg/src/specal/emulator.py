"""Independent zero-mean Gaussian processes over the principal-component weights.

Each weight surface ``w_i(t)`` gets a GP with a product squared-exponential
correlation and its own length scales.  Hyperparameters are fixed by maximum
likelihood once and never revisited during calibration.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import blas, lapack

from .core import (
    DegenerateDataError,
    DomainError,
    NumericalError,
    Spectrum,
    StateError,
    check_unit_points,
)
from .reduction import Basis, StandardizationStats, reconstruct

DEFAULT_NUGGET = 1e-8
LOG_LENGTH_BOUNDS = (np.log(1e-3), np.log(20.0))
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GpHyperParams:
    length_scales: np.ndarray
    variance: float
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        ls = np.array(self.length_scales, dtype=float)
        if ls.ndim != 1 or np.any(~(ls > 0)):
            raise DomainError(f"length scales must be positive, got {ls}")
        if not self.variance > 0:
            raise DomainError(f"marginal variance must be positive, got {self.variance}")
        if not self.nugget >= 0:
            raise DomainError(f"nugget must be nonnegative, got {self.nugget}")
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "nugget", float(self.nugget))


@dataclass(frozen=True)
class WeightPrediction:
    mean: np.ndarray
    variance: np.ndarray


def _check_lengths(length_scales) -> np.ndarray:
    ls = np.asarray(length_scales, dtype=float)
    if np.any(~(ls > 0)):
        raise DomainError(f"length scales must be positive, got {ls}")
    return ls


def correlation(t, t2, length_scales) -> float:
    """``prod_j exp(-(t_j - t2_j)^2 / (2 l_j^2))``."""
    ls = _check_lengths(length_scales)
    d = np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)
    return float(np.exp(-0.5 * np.sum((d / ls) ** 2)))


def correlation_matrix(a, b, length_scales) -> np.ndarray:
    """Cross-correlation between the rows of ``a`` (n, p) and ``b`` (k, p)."""
    ls = _check_lengths(length_scales)
    a = np.atleast_2d(a) / ls
    b = np.atleast_2d(b) / ls
    d2 = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        d2 += (a[:, j, None] - b[None, :, j]) ** 2
    return np.exp(-0.5 * d2)


def _pairwise_sq(inputs: np.ndarray) -> np.ndarray:
    return (inputs[:, None, :] - inputs[None, :, :]).transpose(2, 0, 1) ** 2


def _cholesky(R: np.ndarray):
    try:
        return linalg.cholesky(R, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def _profiled(sq: np.ndarray, w: np.ndarray, log_ls: np.ndarray, nugget: float):
    """Profiled log likelihood and sigma^2 hat; ``(-inf, nan)`` if not PD."""
    m = w.size
    R = np.tensordot(-0.5 * np.exp(-2.0 * log_ls), sq, axes=1)
    np.exp(R, out=R)
    R.flat[:: m + 1] += nugget
    # R is symmetric, so R.T is the same matrix in Fortran order and LAPACK
    # can factor it in place without a copy
    L, info = lapack.dpotrf(R.T, lower=1, clean=0, overwrite_a=1)
    if info != 0:
        return -np.inf, np.nan
    z, _ = lapack.dtrtrs(L, w, lower=1)
    s2 = float(z @ z) / m
    if not s2 > 0:
        return -np.inf, np.nan
    logdet = 2.0 * np.sum(np.log(np.diagonal(L)))
    return -0.5 * (m * np.log(s2) + logdet + m * (1.0 + _LOG_2PI)), s2


def profiled_log_likelihood(inputs, weights, length_scales, nugget=DEFAULT_NUGGET):
    """Log marginal likelihood with the variance profiled out.

    Returns
    -------
    loglik : float
        ``-inf`` when the nugget-inflated correlation matrix is not positive definite.
    variance : float
        ``w^T (R + nugget I)^{-1} w / m``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    w = np.asarray(weights, dtype=float)
    return _profiled(_pairwise_sq(inputs), w, np.log(_check_lengths(length_scales)), nugget)


def initial_length_scales(p: int, n_starts: int = 8, seed: int = 0) -> np.ndarray:
    """Log-spaced starts in [0.05, 5], shuffled independently per input dimension."""
    rng = np.random.default_rng(seed)
    base = np.geomspace(0.05, 5.0, n_starts)
    return np.stack([rng.permutation(base) for _ in range(p)], axis=1)


def fit_mle(
    inputs,
    weights,
    nugget: float = DEFAULT_NUGGET,
    n_starts: int = 8,
    seed: int = 0,
    explore_evals: int = 60,
    polish_evals: int = 400,
) -> GpHyperParams:
    """Maximum-likelihood length scales and marginal variance for one weight.

    Nelder-Mead on log length scales: a short search of ``explore_evals``
    evaluations from each of ``n_starts`` log-spaced starting points, then a
    longer polish from the best point found.  The marginal variance is
    profiled in closed form.  The best point seen is returned, so the result
    is never worse than any start.
    """
    inputs = check_unit_points(inputs, p=np.shape(inputs)[-1])
    w = np.asarray(weights, dtype=float)
    m, p = inputs.shape
    if w.shape != (m,):
        raise DomainError(f"expected {m} weights, got shape {w.shape}")
    if m < p + 2:
        raise DomainError(f"need at least p + 2 = {p + 2} training points, got {m}")
    scale = float(np.std(w))
    if not scale > 0:
        raise DegenerateDataError("all training weights are equal")
    # scale-free objective: rescaling w leaves the optimiser path bit-identical
    wn = w / scale
    sq = _pairwise_sq(inputs)
    lo, hi = LOG_LENGTH_BOUNDS

    def negll(x):
        ll, _ = _profiled(sq, wn, np.clip(x, lo, hi), nugget)
        return -ll if np.isfinite(ll) else np.inf

    # short local searches from every start, then one polish of the best
    best_x, best_f = None, np.inf
    for start in np.log(initial_length_scales(p, n_starts, seed)):
        f0 = negll(start)
        if f0 < best_f:
            best_x, best_f = start, f0
        res = optimize.minimize(
            negll,
            start,
            method="Nelder-Mead",
            bounds=[LOG_LENGTH_BOUNDS] * p,
            options={"xatol": 1e-2, "fatol": 1e-4, "maxfev": explore_evals},
        )
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), res.fun
    if best_x is not None:
        res = optimize.minimize(
            negll,
            best_x,
            method="Nelder-Mead",
            bounds=[LOG_LENGTH_BOUNDS] * p,
            options={"xatol": 1e-3, "fatol": 1e-6, "maxfev": polish_evals},
        )
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), res.fun
    if best_x is None:
        raise NumericalError(
            f"correlation matrix not positive definite at any start (m={m}, nugget={nugget:g}); "
            "increase the nugget"
        )
    ls = np.exp(best_x)
    _, s2 = profiled_log_likelihood(inputs, w, ls, nugget)
    return GpHyperParams(ls, s2, nugget)


def _coincident(inputs: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """``(m, n)`` mask of training inputs that coincide exactly with a query."""
    return np.all(inputs[:, None, :] == thetas[None, :, :], axis=2)


class WeightEmulator:
    """GP for a single principal-component weight surface.

    The nugget is treated as a discontinuous part of the correlation
    function: it sits on the diagonal of ``R`` and is also added to the
    cross-correlation of a query that coincides exactly with a training
    input.  The predictor therefore honours the training weights exactly,
    while off the design it is the usual nugget-regularised kriging mean.
    """

    def __init__(self, index: int, inputs, weights, hyper: GpHyperParams | None = None):
        self.index = int(index)
        self.inputs = check_unit_points(inputs, p=np.shape(inputs)[-1]).copy()
        self.weights = np.asarray(weights, dtype=float).copy()
        if self.weights.shape != (self.inputs.shape[0],):
            raise DomainError("one training weight per training input required")
        self.inputs.setflags(write=False)
        self.weights.setflags(write=False)
        self.hyper = None
        self._chol = None
        self._alpha = None
        if hyper is not None:
            self.condition(hyper)

    @property
    def fitted(self) -> bool:
        return self.hyper is not None

    def fit(self, nugget=DEFAULT_NUGGET, n_starts=8, seed=0) -> "WeightEmulator":
        return self.condition(fit_mle(self.inputs, self.weights, nugget, n_starts, seed))

    def condition(self, hyper: GpHyperParams, chol=None) -> "WeightEmulator":
        """Fix hyperparameters and cache the Cholesky factor and ``R^{-1} w``."""
        if chol is None:
            R = correlation_matrix(self.inputs, self.inputs, hyper.length_scales)
            R[np.diag_indices_from(R)] += hyper.nugget
            chol = _cholesky(R)
            if chol is None:
                raise NumericalError(
                    f"weight {self.index}: correlation matrix not positive definite "
                    f"with length scales {hyper.length_scales} and nugget {hyper.nugget:g}"
                )
        chol = np.asarray(chol, dtype=float)
        alpha = linalg.cho_solve((chol, True), self.weights, check_finite=False)
        chol.setflags(write=False)
        alpha.setflags(write=False)
        self.hyper, self._chol, self._alpha = hyper, chol, alpha
        return self

    @property
    def chol(self) -> np.ndarray:
        self._require_fit()
        return self._chol

    @property
    def alpha(self) -> np.ndarray:
        self._require_fit()
        return self._alpha

    def _require_fit(self):
        if not self.fitted:
            raise StateError(f"weight emulator {self.index} has not been fitted")

    def predict_many(self, thetas):
        """Predictive means and variances at the rows of ``thetas``."""
        self._require_fit()
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        r = correlation_matrix(self.inputs, thetas, self.hyper.length_scales)
        r[_coincident(self.inputs, thetas)] += self.hyper.nugget
        mean = r.T @ self._alpha
        v = linalg.solve_triangular(self._chol, r, lower=True, check_finite=False)
        explained = np.einsum("ij,ij->j", v, v)
        var = self.hyper.variance * (np.maximum(0.0, 1.0 - explained) + self.hyper.nugget)
        return mean, var

    def predict(self, theta) -> tuple[float, float]:
        mean, var = self.predict_many(np.asarray(theta, dtype=float)[None, :])
        return float(mean[0]), float(var[0])


def _fit_one(args):
    i, inputs, w, nugget, n_starts, seed = args
    return fit_mle(inputs, w, nugget, n_starts, seed)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SPECAL_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class EmulatorBundle:
    """The q weight emulators together with the basis and standardization they model."""

    emulators: list
    basis: Basis
    stats: StandardizationStats
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.emulators) != self.basis.q:
            raise DomainError(
                f"{len(self.emulators)} emulators for a basis with q={self.basis.q}"
            )
        self._stack = None

    @property
    def q(self) -> int:
        return self.basis.q

    @property
    def inputs(self) -> np.ndarray:
        return self.emulators[0].inputs

    def _stacked(self):
        if self._stack is None:
            for em in self.emulators:
                em._require_fit()
            inv2 = np.stack([0.5 / em.hyper.length_scales**2 for em in self.emulators])
            alpha = np.stack([em.alpha for em in self.emulators])
            var = np.array([em.hyper.variance for em in self.emulators])
            nug = np.array([em.hyper.nugget for em in self.emulators])
            # explicit inverse factors turn the per-step solves into triangular
            # matrix products, about twice as fast for many query points
            eye = np.eye(self.inputs.shape[0])
            linv = [
                np.asfortranarray(
                    linalg.solve_triangular(em.chol, eye, lower=True, check_finite=False)
                )
                for em in self.emulators
            ]
            self._stack = (inv2, alpha, var, nug, linv)
        return self._stack

    def predict_weights(self, thetas) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of all q weights at the rows of ``thetas``.

        Returns two arrays of shape ``(n, q)``.  Every weight shares the same
        training inputs, so squared distances are computed once.
        """
        inv2, alpha, var, nug, linv = self._stacked()
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        inputs = self.inputs
        n, m, p = thetas.shape[0], inputs.shape[0], inputs.shape[1]
        sq = (thetas[:, None, :] - inputs[None, :, :]) ** 2  # (n, m, p)
        r = (inv2 @ sq.reshape(n * m, p).T).reshape(-1, n, m)  # (q, n, m)
        np.negative(r, out=r)
        np.exp(r, out=r)
        hit = np.all(sq == 0.0, axis=2)
        if hit.any():
            r += nug[:, None, None] * hit
        mean = np.einsum("qnm,qm->nq", r, alpha)
        explained = np.empty_like(mean)
        for i in range(len(linv)):
            v = blas.dtrmm(1.0, linv[i], r[i].T, lower=1)
            explained[:, i] = np.einsum("ij,ij->j", v, v)
        variance = var * (np.maximum(0.0, 1.0 - explained) + nug)
        return mean, variance

    def predict(self, theta) -> WeightPrediction:
        mean, var = self.predict_weights(np.asarray(theta, dtype=float)[None, :])
        return WeightPrediction(mean[0], var[0])


def fit_bundle(
    inputs,
    basis: Basis,
    stats: StandardizationStats,
    nugget: float = DEFAULT_NUGGET,
    n_starts: int = 8,
    seed: int = 0,
    workers: int | None = None,
    provenance: dict | None = None,
) -> EmulatorBundle:
    """Fit one GP per row of ``basis.W``; each fit only sees its own weights."""
    inputs = check_unit_points(inputs, p=np.shape(inputs)[-1])
    if inputs.shape[0] != basis.W.shape[1]:
        raise DomainError("basis weights and training inputs disagree on m")
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(i, inputs, basis.W[i], nugget, n_starts, seed) for i in range(basis.q)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            hypers = list(pool.map(_fit_one, jobs))
    else:
        hypers = [_fit_one(job) for job in jobs]
    emulators = [WeightEmulator(i, inputs, basis.W[i], h) for i, h in enumerate(hypers)]
    return EmulatorBundle(emulators, basis, stats, dict(provenance or {}))


def emulate_spectrum(bundle: EmulatorBundle, theta) -> tuple[Spectrum, WeightPrediction]:
    """Emulated mean log spectrum at ``theta`` and the per-weight predictive moments."""
    theta = check_unit_points(theta, p=bundle.inputs.shape[1])[0]
    pred = bundle.predict(theta)
    return reconstruct(pred.mean, bundle.basis, bundle.stats), pred
