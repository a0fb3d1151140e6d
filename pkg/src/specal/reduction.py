"""Log transform, standardization and the truncated SVD basis.

With ``Xstd = U S V^T`` the basis is ``K = U S / sqrt(m)`` and the training
weights are ``W = sqrt(m) V^T``, so that ``Xstd ~= K W`` and ``K^T K`` is the
diagonal ``S^2 / m``.  A new standardized spectrum ``y`` maps to weights via
``(K^T K)^+ K^T y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateDataError,
    DomainError,
    NumericalError,
    Scale,
    ScaleError,
    Spectrum,
    SpectrumSet,
    WavelengthGrid,
    require_scale,
)


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    scale: float
    grid: WavelengthGrid | None = None

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DegenerateDataError(f"standardization scale must be positive, got {self.scale}")
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "scale", float(self.scale))
        if self.grid is None:
            object.__setattr__(self, "grid", WavelengthGrid(np.arange(self.mean.size, dtype=float)))
        elif len(self.grid) != self.mean.size:
            raise DomainError("grid and mean vector lengths differ")

    def mean_spectrum(self) -> Spectrum:
        return Spectrum(self.grid, self.mean, Scale.LOG)


@dataclass(frozen=True)
class Basis:
    """Truncated SVD basis of a standardized training matrix.

    Attributes
    ----------
    K : ndarray, shape (n_eta, q)
        Basis vectors ``u_i s_i / sqrt(m)``.
    W : ndarray, shape (q, m)
        Training weights ``sqrt(m) v_i^T``.
    singular_values : ndarray
        The full singular spectrum, not only the retained ``q`` values.
    m : int
        Number of training runs the basis was built from.
    """

    K: np.ndarray
    W: np.ndarray
    singular_values: np.ndarray
    m: int

    def __post_init__(self):
        for name in ("K", "W", "singular_values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.K.shape[1] != self.W.shape[0]:
            raise DomainError("K and W disagree on the number of components")

    @property
    def q(self) -> int:
        return self.K.shape[1]

    @property
    def n_eta(self) -> int:
        return self.K.shape[0]

    @property
    def rank(self) -> int:
        """Numerical rank of the training matrix."""
        s = self.singular_values
        tol = s[0] * max(self.n_eta, self.m) * np.finfo(float).eps
        return int(np.sum(s > tol))

    @property
    def ktk_diag(self) -> np.ndarray:
        """Diagonal of ``K^T K``, i.e. ``s_i^2 / m`` for the retained components."""
        return self.singular_values[: self.q] ** 2 / self.m

    @property
    def variance_explained(self) -> np.ndarray:
        s2 = self.singular_values**2
        return np.cumsum(s2) / np.sum(s2)

    @property
    def _inverse_ktk(self) -> np.ndarray:
        d = self.ktk_diag
        inv = np.zeros_like(d)
        live = np.arange(self.q) < self.rank
        inv[live] = 1.0 / d[live]
        return inv

    @property
    def projector(self) -> np.ndarray:
        """``(K^T K)^+ K^T``; rows for numerically null directions are zero."""
        return self._inverse_ktk[:, None] * self.K.T


def log_transform(s: SpectrumSet | Spectrum):
    require_scale(s, Scale.RAW, "log transform input")
    if isinstance(s, SpectrumSet):
        return s.with_matrix(np.log(s.matrix), Scale.LOG)
    return s.with_intensity(np.log(s.intensity), Scale.LOG)


def exp_transform(s: SpectrumSet | Spectrum):
    require_scale(s, Scale.LOG, "exp transform input")
    if isinstance(s, SpectrumSet):
        return s.with_matrix(np.exp(s.matrix), Scale.RAW)
    return s.with_intensity(np.exp(s.intensity), Scale.RAW)


def fit_standardization(logX: SpectrumSet) -> StandardizationStats:
    """Per-bin mean and a single scalar standard deviation of the centered entries."""
    require_scale(logX, Scale.LOG, "standardization input")
    if logX.n_runs < 2:
        raise DomainError("need at least two training runs to standardize")
    mu = logX.matrix.mean(axis=1)
    sigma = float(np.std(logX.matrix - mu[:, None]))
    if not sigma > 0:
        raise DegenerateDataError("training spectra are identical; scale would be zero")
    return StandardizationStats(mu, sigma, logX.grid)


def _check_length(n: int, stats: StandardizationStats):
    if n != stats.mean.size:
        raise DomainError(f"spectrum length {n} does not match stats length {stats.mean.size}")


def standardize(s, stats: StandardizationStats):
    require_scale(s, Scale.LOG, "standardize input")
    if isinstance(s, SpectrumSet):
        _check_length(s.matrix.shape[0], stats)
        return s.with_matrix((s.matrix - stats.mean[:, None]) / stats.scale, Scale.STANDARDIZED)
    _check_length(s.intensity.size, stats)
    return s.with_intensity((s.intensity - stats.mean) / stats.scale, Scale.STANDARDIZED)


def destandardize(s, stats: StandardizationStats):
    require_scale(s, Scale.STANDARDIZED, "destandardize input")
    if isinstance(s, SpectrumSet):
        _check_length(s.matrix.shape[0], stats)
        return s.with_matrix(s.matrix * stats.scale + stats.mean[:, None], Scale.LOG)
    _check_length(s.intensity.size, stats)
    return s.with_intensity(s.intensity * stats.scale + stats.mean, Scale.LOG)


def _sum_zero_basis(m: int) -> np.ndarray:
    """Orthonormal ``(m, m - 1)`` basis of the vectors whose entries sum to zero.

    Columns 2..m of the Householder reflector that swaps ``1/sqrt(m)`` and ``e_1``.
    """
    u = np.full(m, 1.0 / np.sqrt(m))
    u[0] -= 1.0
    H = np.eye(m) - (2.0 / (u @ u)) * np.outer(u, u)
    return H[:, 1:]


def build_basis(Xstd: SpectrumSet, q: int = 15) -> Basis:
    """Thin SVD of the standardized training matrix, truncated to ``q`` components.

    Signs are fixed so that the largest-magnitude entry of every basis vector
    is positive, which makes serialized bases reproducible.

    When every row of the matrix is centered (the usual case, since the
    standardization is fitted on the same runs) the decomposition is taken
    inside the subspace orthogonal to the constant vector. Training weights
    then sum to zero up to rounding for every component, including ones whose
    singular values sit near machine precision, where a plain SVD leaks the
    constant direction into ``V``. The constant direction itself is appended
    as the last component with singular value 0 when ``q`` can reach it.
    """
    require_scale(Xstd, Scale.STANDARDIZED, "basis input")
    X = Xstd.matrix
    n_eta, m = X.shape
    if int(q) != q or not 1 <= q <= min(m, n_eta):
        raise DomainError(f"q must be an integer in [1, {min(m, n_eta)}], got {q}")
    q = int(q)
    row_sums = np.abs(X.sum(axis=1))
    centered = m > 1 and np.all(row_sums <= 1e-10 * (1.0 + np.abs(X).sum(axis=1)))
    try:
        if centered:
            Q = _sum_zero_basis(m)
            U, s, Vt = np.linalg.svd(X @ Q, full_matrices=False)
            Vt = Vt @ Q.T
            if s.size < min(m, n_eta):
                # the constant direction; with a zero singular value its K column is 0
                U = np.column_stack([U, np.zeros(n_eta)])
                s = np.append(s, 0.0)
                Vt = np.vstack([Vt, np.full(m, 1.0 / np.sqrt(m))])
        else:
            U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    Vt = Vt * signs[:, None]
    K = U[:, :q] * (s[:q] / np.sqrt(m))
    W = Vt[:q] * np.sqrt(m)
    return Basis(K=K, W=W, singular_values=s, m=m)


def project(y, basis: Basis) -> np.ndarray:
    """Weights of a standardized spectrum (or of every column of a set)."""
    if isinstance(y, SpectrumSet):
        require_scale(y, Scale.STANDARDIZED, "projection input")
        data = y.matrix
    elif isinstance(y, Spectrum):
        require_scale(y, Scale.STANDARDIZED, "projection input")
        data = y.intensity
    else:
        data = np.asarray(y, dtype=float)
    if data.shape[0] != basis.n_eta:
        raise DomainError(f"spectrum length {data.shape[0]} does not match basis {basis.n_eta}")
    return basis.projector @ data


def reconstruct(w, basis: Basis, stats: StandardizationStats) -> Spectrum:
    """Log-scale spectrum ``mu + sigma K w`` for one weight vector."""
    w = np.asarray(w, dtype=float)
    if w.shape != (basis.q,):
        raise DomainError(f"expected {basis.q} weights, got shape {w.shape}")
    return destandardize(Spectrum(stats.grid, basis.K @ w, Scale.STANDARDIZED), stats)


def reconstruct_matrix(weights, basis: Basis, stats: StandardizationStats) -> np.ndarray:
    """Columnwise :func:`reconstruct` for a ``(q, n)`` weight matrix."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != basis.q:
        raise DomainError(f"expected a ({basis.q}, n) weight matrix, got {weights.shape}")
    return (basis.K @ weights) * stats.scale + stats.mean[:, None]


__all__ = [
    "Basis",
    "ScaleError",
    "StandardizationStats",
    "build_basis",
    "destandardize",
    "exp_transform",
    "fit_standardization",
    "log_transform",
    "project",
    "reconstruct",
    "reconstruct_matrix",
    "standardize",
]
