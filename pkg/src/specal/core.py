"""Shared containers and the unit-cube <-> native parameter map.

Parameters travel through the pipeline as points in the unit cube, in the
fixed order (temperature, log10 density, sodium fraction).  Spectra carry a
scale tag so that operations can refuse inputs on the wrong scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

P = 3
PARAMETER_NAMES = ("t", "log10_rho", "na_frac")

# (low, high) per coordinate: temperature [eV], log10 mass density [g/cc], %Na
NATIVE_BOUNDS = np.array([[0.5, 1.5], [-7.0, -4.0], [0.0, 1.0]])
NATIVE_BOUNDS.setflags(write=False)


class SpecalError(Exception):
    """Base class for all package errors."""


class DomainError(SpecalError, ValueError):
    """An argument lies outside the domain of an operation."""


class ScaleError(SpecalError, ValueError):
    """A spectrum container carries the wrong scale tag."""


class DegenerateDataError(SpecalError, ValueError):
    """Data without enough variation to fit the requested model."""


class NumericalError(SpecalError, ArithmeticError):
    """A factorization or density evaluation broke down."""


class StateError(SpecalError, RuntimeError):
    """An object or pipeline stage is not in the state an operation needs."""


class IntegrityError(SpecalError, IOError):
    """A stored artifact is truncated, corrupted, or of an unknown version."""


class Scale(str, enum.Enum):
    RAW = "raw"
    LOG = "log"
    STANDARDIZED = "standardized"


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def check_unit_points(points, p: int = P) -> np.ndarray:
    """Return ``points`` as an ``(n, p)`` float array, rejecting anything off the unit cube."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != p:
        raise DomainError(f"expected points with {p} coordinates, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)) or np.any(pts < 0.0) or np.any(pts > 1.0):
        raise DomainError("unit-cube coordinates must lie in [0, 1]")
    return pts


@dataclass(frozen=True)
class ParameterPoint:
    """A point of the unit cube, ordered (temperature, log10 density, sodium fraction)."""

    coords: np.ndarray

    def __post_init__(self):
        c = check_unit_points(self.coords, p=np.size(self.coords))[0]
        object.__setattr__(self, "coords", _frozen(c))

    @property
    def p(self) -> int:
        return self.coords.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class NativeParameters:
    temperature_eV: float
    log10_density_gcc: float
    sodium_fraction: float

    def __post_init__(self):
        vals = self.as_array()
        lo, hi = NATIVE_BOUNDS[:, 0], NATIVE_BOUNDS[:, 1]
        if not np.all(np.isfinite(vals)) or np.any(vals < lo) or np.any(vals > hi):
            raise DomainError(
                f"native parameters {tuple(vals)} outside "
                f"T in [0.5, 1.5], log10 rho in [-7, -4], %Na in [0, 1]"
            )

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.temperature_eV, self.log10_density_gcc, self.sodium_fraction], dtype=float
        )

    @property
    def copper_fraction(self) -> float:
        return 1.0 - self.sodium_fraction


def unit_to_native_array(points) -> np.ndarray:
    """Vectorised affine map from ``(n, 3)`` unit-cube points to native units."""
    pts = check_unit_points(points)
    lo, hi = NATIVE_BOUNDS[:, 0], NATIVE_BOUNDS[:, 1]
    return lo + pts * (hi - lo)


def native_to_unit_array(values) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    lo, hi = NATIVE_BOUNDS[:, 0], NATIVE_BOUNDS[:, 1]
    if vals.shape[-1] != P or np.any(vals < lo) or np.any(vals > hi):
        raise DomainError("native values outside their physical ranges")
    return (vals - lo) / (hi - lo)


def to_native(t) -> NativeParameters:
    """Map a unit-cube point to (T [eV], log10 rho [g/cc], %Na).

    Examples
    --------
    >>> to_native([0.5, 0.5, 0.5])
    NativeParameters(temperature_eV=1.0, log10_density_gcc=-5.5, sodium_fraction=0.5)
    """
    native = unit_to_native_array(np.asarray(t, dtype=float))[0]
    return NativeParameters(*(float(v) for v in native))


def from_native(n: NativeParameters) -> ParameterPoint:
    return ParameterPoint(native_to_unit_array(n.as_array())[0])


@dataclass(frozen=True)
class WavelengthGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("a wavelength grid needs at least two bins")
        if not np.all(np.diff(v) > 0):
            raise DomainError("wavelength grid must be strictly increasing")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "WavelengthGrid":
        return cls(np.linspace(lo, hi, n))

    def __len__(self) -> int:
        return self.values.size

    @property
    def span(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])


def _check_scale(tag) -> Scale:
    try:
        return Scale(tag)
    except ValueError:
        raise ScaleError(f"unknown scale tag {tag!r}") from None


def require_scale(obj, scale: Scale, what: str = "input") -> None:
    if obj.scale is not scale:
        raise ScaleError(f"{what} must be on the {scale.value} scale, got {obj.scale.value}")


@dataclass(frozen=True)
class Spectrum:
    grid: WavelengthGrid
    intensity: np.ndarray
    scale: Scale = Scale.RAW

    def __post_init__(self):
        scale = _check_scale(self.scale)
        y = np.asarray(self.intensity, dtype=float)
        if y.ndim != 1 or y.size != len(self.grid):
            raise DomainError(
                f"intensity length {y.size} does not match grid length {len(self.grid)}"
            )
        if scale is Scale.RAW and not np.all(y > 0):
            raise DomainError("raw intensities must be strictly positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "intensity", _frozen(y))

    def with_intensity(self, intensity, scale: Scale | None = None) -> "Spectrum":
        return Spectrum(self.grid, intensity, self.scale if scale is None else scale)


@dataclass(frozen=True)
class SpectrumSet:
    """``n_eta x m`` matrix of spectra, one run per column, plus the run inputs."""

    grid: WavelengthGrid
    matrix: np.ndarray
    inputs: np.ndarray
    scale: Scale = Scale.RAW

    def __post_init__(self):
        scale = _check_scale(self.scale)
        X = np.asarray(self.matrix, dtype=float)
        if X.ndim != 2 or X.shape[0] != len(self.grid):
            raise DomainError(
                f"matrix shape {X.shape} incompatible with grid length {len(self.grid)}"
            )
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.shape[0] != X.shape[1]:
            raise DomainError(f"{X.shape[1]} columns but {inputs.shape[0]} inputs")
        check_unit_points(inputs, p=inputs.shape[1])
        if scale is Scale.RAW and not np.all(X > 0):
            raise DomainError("raw intensities must be strictly positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "matrix", _frozen(X))
        object.__setattr__(self, "inputs", _frozen(inputs))

    @property
    def n_runs(self) -> int:
        return self.matrix.shape[1]

    def column(self, i: int) -> Spectrum:
        return Spectrum(self.grid, self.matrix[:, i], self.scale)

    def with_matrix(self, matrix, scale: Scale) -> "SpectrumSet":
        return SpectrumSet(self.grid, matrix, self.inputs, scale)
