"""Analytic stand-in for a plasma emission code.

The model is a smooth continuum plus Gaussian emission lines for sodium and
copper::

    I(lam) = B(lam; T, rho)
             + sum_e A_e(T, rho, c) sum_k s_ek exp(-E_ek / T) G(lam - lam_ek; w(rho))

    B      = b0 exp(T / T0) (1 + b1 (lam - lam_min) / (lam_max - lam_min)) h(rho)
             * exp(-kappa E_ph(lam) / T)
    w(rho) = w0 (rho / rho_mid) ** beta
    h(rho) = (rho / rho_mid) ** alpha
    A_Na   = a0 c (1 + gamma (1 - c)) h(rho)
    A_Cu   = a0 (1 - c) h(rho)

``G`` is a unit-area Gaussian, ``c`` the sodium fraction and
``E_ph = hc / lam`` the photon energy in eV.  The last continuum factor is a
Wien-like shape term that ties the continuum slope to temperature.  The factor
``1 + gamma (1 - c)`` is the matrix effect: sodium lines brighten, per unit of
sodium, as copper is added.  Everything is infinitely differentiable in
(T, log10 rho, c) and strictly positive.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    DomainError,
    NativeParameters,
    Scale,
    Spectrum,
    SpectrumSet,
    WavelengthGrid,
    require_scale,
    unit_to_native_array,
)
from .design import Design

LOG10_RHO_MID = -5.5
HC_EV_NM = 1239.84198
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ElementLines:
    centers: tuple[float, ...]
    strengths: tuple[float, ...]
    energies: tuple[float, ...]

    def __post_init__(self):
        n = len(self.centers)
        if len(self.strengths) != n or len(self.energies) != n:
            raise DomainError("centers, strengths and energies must have equal length")
        if min(self.strengths) <= 0 or min(self.energies) <= 0:
            raise DomainError("line strengths and upper-level energies must be positive")
        for name in ("centers", "strengths", "energies"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))


@dataclass(frozen=True)
class LineList:
    sodium: ElementLines = ElementLines(
        centers=(589.0, 589.6, 819.5), strengths=(1.0, 0.5, 0.4), energies=(2.1, 2.1, 3.6)
    )
    copper: ElementLines = ElementLines(
        centers=(324.8, 327.4, 521.8), strengths=(1.0, 0.5, 0.8), energies=(3.8, 3.8, 6.2)
    )


@dataclass(frozen=True)
class SurrogateConfig:
    line_list: LineList = field(default_factory=LineList)
    matrix_gain: float = 2.0
    base_width: float = 8.0  # nm, at rho_mid
    width_exponent: float = 0.1
    line_amplitude: float = 3.0e13
    continuum_amplitude: float = 1.0e9
    continuum_temperature: float = 1.0  # eV
    continuum_slope: float = 1.0
    continuum_photon_factor: float = 1.0
    density_exponent: float = 0.3
    grid_min: float = 250.0
    grid_max: float = 900.0
    n_bins: int = 2048

    def __post_init__(self):
        if self.matrix_gain < 0:
            raise DomainError("matrix gain must be nonnegative")
        if self.base_width <= 0:
            raise DomainError("base line width must be positive")
        if self.line_amplitude <= 0 or self.continuum_amplitude <= 0:
            raise DomainError("amplitudes must be positive")
        if self.continuum_temperature <= 0 or self.continuum_slope < 0:
            raise DomainError("continuum temperature must be positive, slope nonnegative")
        if self.continuum_photon_factor < 0:
            raise DomainError("continuum photon factor must be nonnegative")
        lo, hi = self.grid.span
        for el in (self.line_list.sodium, self.line_list.copper):
            if min(el.centers) < lo or max(el.centers) > hi:
                raise DomainError("all line centers must lie inside the wavelength grid")

    @property
    def grid(self) -> WavelengthGrid:
        return WavelengthGrid.uniform(self.grid_min, self.grid_max, int(self.n_bins))

    def to_dict(self) -> dict:
        d = asdict(self)
        for el in ("sodium", "copper"):
            d["line_list"][el] = {k: list(v) for k, v in d["line_list"][el].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        d = dict(d)
        lines = d.pop("line_list", None)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise DomainError(f"unknown surrogate config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if lines is not None:
            default = LineList()
            ll = LineList(
                sodium=ElementLines(**lines["sodium"]) if "sodium" in lines else default.sodium,
                copper=ElementLines(**lines["copper"]) if "copper" in lines else default.copper,
            )
            cfg = replace(cfg, line_list=ll)
        return cfg

    @classmethod
    def from_json(cls, path) -> "SurrogateConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class NoiseModel:
    precision: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not self.precision > 0:
            raise DomainError("noise precision must be positive")

    @property
    def std(self) -> float:
        return float(1.0 / np.sqrt(self.precision))


def _density_ratio(log10_rho):
    return 10.0 ** (np.asarray(log10_rho) - LOG10_RHO_MID)


def _element_term(wl, el: ElementLines, amp, T, width):
    # wl: (n,1); amp, T, width: (m,)
    total = np.zeros((wl.shape[0], np.size(T)))
    for center, s, E in zip(el.centers, el.strengths, el.energies):
        profile = np.exp(-0.5 * ((wl - center) / width) ** 2) / (width * _SQRT_2PI)
        total += (s * np.exp(-E / T)) * profile
    return amp * total


def _components(native: np.ndarray, cfg: SurrogateConfig):
    native = np.atleast_2d(native)
    T, logrho, c = native[:, 0], native[:, 1], native[:, 2]
    wl = cfg.grid.values[:, None]
    ratio = _density_ratio(logrho)
    h = ratio**cfg.density_exponent
    width = cfg.base_width * ratio**cfg.width_exponent
    x = (wl - cfg.grid_min) / (cfg.grid_max - cfg.grid_min)
    photon = HC_EV_NM / wl
    continuum = (
        cfg.continuum_amplitude
        * np.exp(T / cfg.continuum_temperature)
        * h
        * (1.0 + cfg.continuum_slope * x)
        * np.exp(-cfg.continuum_photon_factor * photon / T)
    )
    a_na = cfg.line_amplitude * c * (1.0 + cfg.matrix_gain * (1.0 - c)) * h
    a_cu = cfg.line_amplitude * (1.0 - c) * h
    na = _element_term(wl, cfg.line_list.sodium, a_na, T, width)
    cu = _element_term(wl, cfg.line_list.copper, a_cu, T, width)
    return continuum, na, cu


def _native_array(n) -> np.ndarray:
    if isinstance(n, NativeParameters):
        return n.as_array()
    return NativeParameters(*np.asarray(n, dtype=float)).as_array()


def line_terms(n: NativeParameters, cfg: SurrogateConfig | None = None) -> dict:
    """Continuum and per-element line contributions of :func:`simulate`."""
    cfg = cfg or SurrogateConfig()
    continuum, na, cu = _components(_native_array(n), cfg)
    return {"continuum": continuum[:, 0], "Na": na[:, 0], "Cu": cu[:, 0]}


def simulate_native_matrix(native: np.ndarray, cfg: SurrogateConfig) -> np.ndarray:
    """``(n_eta, m)`` raw intensities for ``(m, 3)`` native parameter rows."""
    continuum, na, cu = _components(native, cfg)
    return continuum + na + cu


def simulate(n: NativeParameters, cfg: SurrogateConfig | None = None) -> Spectrum:
    cfg = cfg or SurrogateConfig()
    intensity = simulate_native_matrix(_native_array(n)[None, :], cfg)[:, 0]
    return Spectrum(cfg.grid, intensity, Scale.RAW)


def simulate_batch(design: Design | np.ndarray, cfg: SurrogateConfig | None = None) -> SpectrumSet:
    """Run the surrogate at every design point (unit-cube coordinates)."""
    cfg = cfg or SurrogateConfig()
    points = design.points if isinstance(design, Design) else np.atleast_2d(design)
    native = unit_to_native_array(points)
    return SpectrumSet(cfg.grid, simulate_native_matrix(native, cfg), points, Scale.RAW)


def add_noise(s, nm: NoiseModel):
    """Add iid N(0, 1/precision) noise to a standardized spectrum or spectrum set."""
    require_scale(s, Scale.STANDARDIZED, "noise input")
    rng = np.random.default_rng(nm.seed)
    if isinstance(s, SpectrumSet):
        noisy = s.matrix + nm.std * rng.standard_normal(s.matrix.shape)
        return s.with_matrix(noisy, Scale.STANDARDIZED)
    noisy = s.intensity + nm.std * rng.standard_normal(s.intensity.shape)
    return s.with_intensity(noisy)
