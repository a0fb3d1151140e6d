"""Emulator accuracy metrics and calibration summaries, plus their CSV files.

Undefined metric values (zero variance or zero denominator at a bin) are
reported as NaN and skipped by medians and pass-rate summaries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import Chain, PosteriorSummary, summarize
from .core import PARAMETER_NAMES, DomainError, Scale, Spectrum, SpectrumSet, require_scale
from .reduction import StandardizationStats


def _matrix(x, what: str) -> np.ndarray:
    if isinstance(x, SpectrumSet):
        return x.matrix
    if isinstance(x, Spectrum):
        return x.intensity[:, None]
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise DomainError(f"{what} must be an (n_eta, n_runs) matrix")
    return a


def r_squared(predictions, truths) -> np.ndarray:
    """Per-bin ``1 - var(pred - truth) / var(truth)`` across runs.

    Parameters
    ----------
    predictions, truths : SpectrumSet or ndarray
        Matrices of shape ``(n_eta, n_runs)`` on the same scale.

    Returns
    -------
    ndarray
        One value per bin; NaN where the truths have zero variance.
    """
    pred, truth = _matrix(predictions, "predictions"), _matrix(truths, "truths")
    if pred.shape != truth.shape:
        raise DomainError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[1] < 2:
        raise DomainError("R^2 needs at least two runs")
    raw = np.var(truth, axis=1)
    res = np.var(pred - truth, axis=1)
    out = np.full(raw.shape, np.nan)
    ok = raw > 0
    out[ok] = 1.0 - res[ok] / raw[ok]
    return out


def percent_error(prediction, truth, stats: StandardizationStats) -> np.ndarray:
    """Signed per-bin percent error in log-intensity units.

    ``100 sigma (pred - truth) / (sigma truth + mu)``, positive when the
    prediction is high.  Accepts standardized spectra, spectrum sets, or
    plain arrays (vectors or ``(n_eta, n_runs)`` matrices).
    """
    for s in (prediction, truth):
        if isinstance(s, (Spectrum, SpectrumSet)):
            require_scale(s, Scale.STANDARDIZED, "percent_error input")
    pred = prediction.intensity if isinstance(prediction, Spectrum) else prediction
    tru = truth.intensity if isinstance(truth, Spectrum) else truth
    pred = pred.matrix if isinstance(pred, SpectrumSet) else np.asarray(pred, dtype=float)
    tru = tru.matrix if isinstance(tru, SpectrumSet) else np.asarray(tru, dtype=float)
    if pred.shape != tru.shape:
        raise DomainError(f"shape mismatch: {pred.shape} vs {tru.shape}")
    mu = stats.mean if pred.ndim == 1 else stats.mean[:, None]
    denom = stats.scale * tru + mu
    num = 100.0 * stats.scale * (pred - tru)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom != 0, num / np.where(denom != 0, denom, 1.0), np.nan)
    return out


def median_abs_percent_error(pe: np.ndarray) -> np.ndarray:
    """Per-run median of ``|percent error|`` over defined bins."""
    pe = np.asarray(pe, dtype=float)
    return np.nanmedian(np.abs(pe), axis=0)


@dataclass(frozen=True)
class EmulatorReport:
    wavelength: np.ndarray
    r_squared: np.ndarray
    percent_error: np.ndarray  # (n_eta, n_test)
    median_abs_percent_error: np.ndarray
    test_inputs: np.ndarray

    def fraction_within(self, band: float = 2.0) -> float:
        pe = self.percent_error[np.isfinite(self.percent_error)]
        return float(np.mean(np.abs(pe) <= band))

    def fraction_r2_above(self, threshold: float = 0.9) -> float:
        r2 = self.r_squared[np.isfinite(self.r_squared)]
        return float(np.mean(r2 > threshold))


def emulator_report(predictions, truths, stats: StandardizationStats, test_inputs) -> EmulatorReport:
    """Metrics for emulated vs. true standardized test spectra (``(n_eta, n_test)``)."""
    pred, truth = _matrix(predictions, "predictions"), _matrix(truths, "truths")
    pe = percent_error(pred, truth, stats)
    return EmulatorReport(
        wavelength=stats.grid.values if stats.grid is not None else np.arange(pred.shape[0], dtype=float),
        r_squared=r_squared(pred, truth),
        percent_error=pe,
        median_abs_percent_error=median_abs_percent_error(pe),
        test_inputs=np.asarray(test_inputs, dtype=float),
    )


@dataclass(frozen=True)
class CaseResult:
    case: int
    truth: np.ndarray
    summary: PosteriorSummary

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.summary.mean - self.truth)


@dataclass(frozen=True)
class CalibrationReport:
    cases: list
    pure_sodium: np.ndarray  # posterior-mean sodium fraction, one per chain
    pure_copper: np.ndarray

    def recovered(self, j: int, tol: float) -> int:
        """Number of cases whose posterior mean of coordinate ``j`` is within ``tol``."""
        return int(sum(c.abs_error[j] <= tol for c in self.cases))


def calibration_report(
    truths, chains, sodium_chains=(), copper_chains=(), case_labels=None
) -> CalibrationReport:
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    chains = list(chains)
    if len(chains) != truths.shape[0]:
        raise DomainError("one chain per test observation required")
    labels = range(len(chains)) if case_labels is None else list(case_labels)
    cases = [CaseResult(int(k), t, summarize(c)) for k, t, c in zip(labels, truths, chains)]
    na = np.array([np.mean(c.samples[:, 2]) for c in sodium_chains])
    cu = np.array([np.mean(c.samples[:, 2]) for c in copper_chains])
    return CalibrationReport(cases, na, cu)


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_emulator_metrics(report: EmulatorReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    n_test = report.percent_error.shape[1]
    metrics = out_dir / "emulator_metrics.csv"
    _write_rows(
        metrics,
        ["wavelength_nm", "r2"] + [f"pct_err_run{k:02d}" for k in range(n_test)],
        (
            [_fmt(wl), _fmt(r2)] + [_fmt(v) for v in row]
            for wl, r2, row in zip(report.wavelength, report.r_squared, report.percent_error)
        ),
    )
    design = out_dir / "emulator_design_errors.csv"
    _write_rows(
        design,
        ["run"] + list(PARAMETER_NAMES) + ["median_abs_pct_err"],
        (
            [k] + [_fmt(v) for v in t] + [_fmt(e)]
            for k, (t, e) in enumerate(zip(report.test_inputs, report.median_abs_percent_error))
        ),
    )
    return [metrics, design]


def write_calibration_files(report: CalibrationReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    scatter = out_dir / "calibration_scatter.csv"
    header = ["case"]
    for name in PARAMETER_NAMES:
        header += [f"true_{name}", f"mean_{name}", f"lower_{name}", f"upper_{name}", f"abs_err_{name}"]
    rows = []
    for c in report.cases:
        row = [c.case]
        for j in range(len(PARAMETER_NAMES)):
            s = c.summary
            row += [_fmt(c.truth[j]), _fmt(s.mean[j]), _fmt(s.lower[j]), _fmt(s.upper[j]), _fmt(c.abs_error[j])]
        rows.append(row)
    _write_rows(scatter, header, rows)
    hist = out_dir / "single_element_hist.csv"
    _write_rows(
        hist,
        ["suite", "case", "posterior_mean_na_frac"],
        [["pure_na", k, _fmt(v)] for k, v in enumerate(report.pure_sodium)]
        + [["pure_cu", k, _fmt(v)] for k, v in enumerate(report.pure_copper)],
    )
    return [scatter, hist]


def write_pairwise_samples(chain: Chain, case: int, out_dir, thin: int = 10) -> Path:
    """Thinned posterior samples for a pairwise scatter plot of one case."""
    path = Path(out_dir) / f"pairwise_samples_{case:02d}.csv"
    _write_rows(
        path,
        ["iteration"] + list(PARAMETER_NAMES),
        (
            [chain.burn_in + k] + [_fmt(v) for v in row]
            for k, row in enumerate(chain.samples)
            if k % thin == 0
        ),
    )
    return path


def pairwise_cases(report: EmulatorReport, seed: int, available=None) -> list[int]:
    """The test case with the worst emulator error, plus one other chosen by ``seed``.

    Only cases in ``available`` (default: all) are considered.
    """
    n = report.percent_error.shape[1]
    available = list(range(n)) if available is None else sorted(available)
    err = report.median_abs_percent_error[available]
    worst = available[int(np.nanargmax(err))]
    others = [k for k in available if k != worst]
    if not others:
        return [worst]
    pick = int(np.random.default_rng(seed).choice(others))
    return [worst, pick]


def build_reports(
    emulator: EmulatorReport,
    truths,
    chains,
    out_dir,
    sodium_chains=(),
    copper_chains=(),
    seed: int = 0,
    case_labels=None,
) -> tuple[EmulatorReport, CalibrationReport, list[Path]]:
    """Write every plot-ready file and return the two reports with the file list.

    ``chains[i]`` belongs to test case ``case_labels[i]`` (default ``i``).
    """
    chains = list(chains)
    labels = list(range(len(chains))) if case_labels is None else [int(k) for k in case_labels]
    cal = calibration_report(truths, chains, sodium_chains, copper_chains, labels)
    files = write_emulator_metrics(emulator, out_dir)
    files += write_calibration_files(cal, out_dir)
    by_case = dict(zip(labels, chains))
    for k in pairwise_cases(emulator, seed, available=labels):
        files.append(write_pairwise_samples(by_case[k], k, out_dir))
    return emulator, cal, files
