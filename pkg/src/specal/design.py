"""Latin hypercube designs over the unit cube."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PARAMETER_NAMES, DomainError, check_unit_points

KINDS = ("training", "test")


@dataclass(frozen=True)
class Design:
    points: np.ndarray
    seed: int
    kind: str = "training"

    def __post_init__(self):
        pts = check_unit_points(self.points, p=np.shape(self.points)[-1]).copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.kind not in KINDS:
            raise DomainError(f"design kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.m


def latin_hypercube(m: int, p: int = 3, seed: int = 0, kind: str = "training") -> Design:
    """Plain Latin hypercube with a uniform jitter inside every stratum.

    Coordinate ``j`` of the returned design has exactly one value in each
    interval ``[k/m, (k+1)/m)``.  The result is a pure function of
    ``(m, p, seed)``.
    """
    if int(m) != m or int(p) != p or m < 1 or p < 1:
        raise DomainError(f"need positive integer m and p, got m={m}, p={p}")
    m, p = int(m), int(p)
    rng = np.random.default_rng(seed)
    strata = np.stack([rng.permutation(m) for _ in range(p)], axis=1)
    jitter = rng.random((m, p))
    points = (strata + jitter) / m
    # rounding can push (k + u)/m onto the upper edge; keep it inside stratum k
    bad = np.floor(points * m) != strata
    if np.any(bad):
        points[bad] = (strata[bad] + 0.5) / m
    return Design(points, seed=seed, kind=kind)


def fixed_composition_design(base: Design, sodium_fraction: float) -> Design:
    """Copy temperature and density from ``base``; set every composition to a constant."""
    if not 0.0 <= sodium_fraction <= 1.0:
        raise DomainError(f"sodium fraction must lie in [0, 1], got {sodium_fraction}")
    points = np.array(base.points, copy=True)
    points[:, -1] = sodium_fraction
    return Design(points, seed=base.seed, kind=base.kind)


def is_stratified(values, m: int | None = None) -> bool:
    """True when ``floor(m * values)`` is a permutation of ``0..m-1``."""
    v = np.asarray(values, dtype=float)
    m = v.size if m is None else m
    bins = np.minimum(np.floor(v * m).astype(int), m - 1)
    return np.array_equal(np.sort(bins), np.arange(m))


def write_design_csv(design: Design, path) -> None:
    if design.p != len(PARAMETER_NAMES):
        raise DomainError("CSV export is defined for three-parameter designs")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARAMETER_NAMES)
        for row in design.points:
            w.writerow([repr(float(v)) for v in row])


def read_design_csv(path, seed: int = 0, kind: str = "training") -> Design:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != PARAMETER_NAMES:
        raise DomainError(f"{path}: expected header {','.join(PARAMETER_NAMES)}")
    return Design(np.array(rows[1:], dtype=float), seed=seed, kind=kind)
