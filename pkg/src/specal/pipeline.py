"""Staged workflow: design, simulate, reduce, fit, calibrate, evaluate.

Every stage reads its predecessor's arrays from an :class:`ArtifactStore`
and records a cumulative configuration hash.  A stage refuses to run on
top of a predecessor built from a different configuration unless forced.
Nothing here reads the clock, so two runs with the same configuration
write identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationProblem, Chain, run_mcmc_many
from .core import DomainError, Scale, SpectrumSet, StateError, WavelengthGrid
from .design import Design, fixed_composition_design, latin_hypercube, write_design_csv
from .emulator import DEFAULT_NUGGET, default_workers, fit_bundle
from .evaluation import build_reports, emulator_report
from .reduction import (
    Basis,
    StandardizationStats,
    build_basis,
    fit_standardization,
    log_transform,
    standardize,
)
from .store import ArtifactStore, atomic_write_text, dumps_json, load_bundle, save_bundle
from .surrogate import NoiseModel, SurrogateConfig, add_noise, simulate_batch

STAGES = ("design", "simulate", "reduce", "fit", "calibrate", "evaluate")
SUITES = ("test", "pure_na", "pure_cu")


class ConfigError(DomainError):
    """Invalid pipeline configuration or command-line override."""


@dataclass(frozen=True)
class Seeds:
    design_train: int = 1
    design_test: int = 2
    noise: int = 3
    mcmc: int = 4
    mle: int = 5


@dataclass(frozen=True)
class PipelineConfig:
    """Experiment constants for one pipeline run.

    ``surrogate`` holds surrogate settings inline; ``surrogate_path`` may
    name a JSON file instead, resolved relative to the config file.
    ``n_bins`` overrides the surrogate grid size when given.
    """

    m_train: int = 500
    m_test: int = 25
    q: int = 15
    lambda_y: float = 4.0
    n_samples: int = 15000
    nugget: float = DEFAULT_NUGGET
    n_starts: int = 8
    n_bins: int | None = None
    seeds: Seeds = field(default_factory=Seeds)
    surrogate: dict = field(default_factory=dict)
    surrogate_path: str | None = None
    out: str = "specal-out"

    def __post_init__(self):
        for name in ("m_train", "m_test", "q", "n_samples", "n_starts"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.m_train < 2 or self.m_test < 2:
            raise ConfigError("designs need at least two runs")
        if self.q > self.m_train:
            raise ConfigError(f"q={self.q} exceeds m_train={self.m_train}")
        if not self.lambda_y > 0:
            raise ConfigError("lambda_y must be positive")
        if not self.nugget >= 0:
            raise ConfigError("nugget must be nonnegative")
        if self.n_bins is not None and (int(self.n_bins) != self.n_bins or self.n_bins < 2):
            raise ConfigError("n_bins must be an integer >= 2")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seeds = d.pop("seeds", {})
        unknown = set(seeds) - {f.name for f in fields(Seeds)}
        if unknown:
            raise ConfigError(f"unknown seed names: {sorted(unknown)}")
        path = d.get("surrogate_path")
        if path is not None and base_dir is not None and not Path(path).is_absolute():
            d["surrogate_path"] = str(Path(base_dir) / path)
        return cls(seeds=Seeds(**seeds), **d)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent)

    def with_overrides(self, **kw) -> "PipelineConfig":
        seeds = {k[5:]: v for k, v in kw.items() if k.startswith("seed_") and v is not None}
        rest = {k: v for k, v in kw.items() if not k.startswith("seed_") and v is not None}
        return replace(self, seeds=replace(self.seeds, **seeds), **rest)

    def surrogate_config(self) -> SurrogateConfig:
        d = {}
        if self.surrogate_path is not None:
            d.update(json.loads(Path(self.surrogate_path).read_text(encoding="utf-8")))
        d.update(self.surrogate)
        if self.n_bins is not None:
            d["n_bins"] = int(self.n_bins)
        return SurrogateConfig.from_dict(d)

    def to_dict(self) -> dict:
        """Everything except the output directory, which never affects results."""
        d = asdict(self)
        d.pop("out")
        return d


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def stage_settings(cfg: PipelineConfig, stage: str) -> dict:
    """The configuration values a stage depends on directly."""
    s = cfg.seeds
    return {
        "design": {
            "m_train": cfg.m_train,
            "m_test": cfg.m_test,
            "seed_design_train": s.design_train,
            "seed_design_test": s.design_test,
        },
        "simulate": {"surrogate": cfg.surrogate_config().to_dict()},
        "reduce": {"q": cfg.q},
        "fit": {"nugget": cfg.nugget, "n_starts": cfg.n_starts, "seed_mle": s.mle},
        "calibrate": {
            "lambda_y": cfg.lambda_y,
            "n_samples": cfg.n_samples,
            "seed_noise": s.noise,
            "seed_mcmc": s.mcmc,
        },
        "evaluate": {"seed_mcmc": s.mcmc},
    }[stage]


def stage_hash(cfg: PipelineConfig, stage: str) -> str:
    """Hash of a stage's settings chained with every predecessor's."""
    chained = []
    for name in STAGES[: STAGES.index(stage) + 1]:
        chained.append([name, stage_settings(cfg, name)])
    return _hash(chained)


def _check_ready(store: ArtifactStore, cfg: PipelineConfig, stage: str, force: bool) -> None:
    i = STAGES.index(stage)
    if i == 0:
        return
    prev = STAGES[i - 1]
    rec = store.stage(prev)
    if rec is None:
        raise StateError(f"stage {stage!r} needs the output of {prev!r}; run `specal {prev}` first")
    if not force and rec["config_hash"] != stage_hash(cfg, prev):
        raise StateError(
            f"stage {prev!r} in {store.root} was produced with a different configuration "
            f"({rec['config_hash']} != {stage_hash(cfg, prev)}); re-run it or pass --force"
        )


def _record(store: ArtifactStore, cfg: PipelineConfig, stage: str, extra: dict | None = None) -> None:
    # later stages are now out of date
    for name in STAGES[STAGES.index(stage) + 1 :]:
        store.manifest["stages"].pop(name, None)
    store.manifest["config"] = cfg.to_dict()
    store.manifest["config_hash"] = stage_hash(cfg, STAGES[-1])
    store.manifest["package_version"] = __version__
    info = {
        "config_hash": stage_hash(cfg, stage),
        "settings": stage_settings(cfg, stage),
        "seeds": asdict(cfg.seeds),
    }
    info.update(extra or {})
    store.record_stage(stage, info)


def _design(store: ArtifactStore, kind: str) -> Design:
    name = "training" if kind == "training" else "test"
    return Design(store.get_array(f"design/{name}"), seed=0, kind=name)


# -- stages -------------------------------------------------------------------


def cmd_design(store: ArtifactStore, cfg: PipelineConfig, force: bool = False) -> None:
    train = latin_hypercube(cfg.m_train, seed=cfg.seeds.design_train, kind="training")
    test = latin_hypercube(cfg.m_test, seed=cfg.seeds.design_test, kind="test")
    store.root.mkdir(parents=True, exist_ok=True)
    for d in (train, test):
        store.put_array(f"design/{d.kind}", d.points)
        write_design_csv(d, store.root / f"design_{d.kind}.csv")
    _record(store, cfg, "design", {"files": ["design_training.csv", "design_test.csv"]})


def test_suites(test: Design) -> dict[str, Design]:
    """Held-out designs: the test design and its pure-sodium and pure-copper copies."""
    return {
        "test": test,
        "pure_na": fixed_composition_design(test, 1.0),
        "pure_cu": fixed_composition_design(test, 0.0),
    }


def cmd_simulate(store: ArtifactStore, cfg: PipelineConfig, force: bool = False) -> None:
    _check_ready(store, cfg, "simulate", force)
    scfg = cfg.surrogate_config()
    store.put_array("grid", scfg.grid.values)
    store.put_array("raw/training", simulate_batch(_design(store, "training"), scfg).matrix)
    for suite, d in test_suites(_design(store, "test")).items():
        store.put_array(f"raw/{suite}", simulate_batch(d, scfg).matrix)
    _record(store, cfg, "simulate")


def _raw_set(store: ArtifactStore, name: str, inputs) -> SpectrumSet:
    return SpectrumSet(WavelengthGrid(store.get_array("grid")), store.get_array(name), inputs, Scale.RAW)


def cmd_reduce(store: ArtifactStore, cfg: PipelineConfig, force: bool = False) -> None:
    _check_ready(store, cfg, "reduce", force)
    train = _design(store, "training")
    logX = log_transform(_raw_set(store, "raw/training", train.points))
    stats = fit_standardization(logX)
    basis = build_basis(standardize(logX, stats), cfg.q)
    store.put_array("reduce/mu", stats.mean)
    store.put_array("reduce/K", basis.K)
    store.put_array("reduce/W", basis.W)
    store.put_array("reduce/singular_values", basis.singular_values)
    ve = basis.variance_explained
    _record(
        store,
        cfg,
        "reduce",
        {"sigma": stats.scale, "variance_explained": float(ve[-1]), "rank": basis.rank},
    )


def _load_reduction(store: ArtifactStore):
    rec = store.stage("reduce")
    stats = StandardizationStats(
        store.get_array("reduce/mu"), rec["sigma"], WavelengthGrid(store.get_array("grid"))
    )
    basis = Basis(
        K=store.get_array("reduce/K"),
        W=store.get_array("reduce/W"),
        singular_values=store.get_array("reduce/singular_values"),
        m=store.get_array("design/training").shape[0],
    )
    return stats, basis


def cmd_fit(store: ArtifactStore, cfg: PipelineConfig, force: bool = False, workers=None) -> None:
    _check_ready(store, cfg, "fit", force)
    stats, basis = _load_reduction(store)
    bundle = fit_bundle(
        _design(store, "training").points,
        basis,
        stats,
        nugget=cfg.nugget,
        n_starts=cfg.n_starts,
        seed=cfg.seeds.mle,
        workers=default_workers() if workers is None else workers,
        provenance={"config_hash": stage_hash(cfg, "fit"), "seeds": asdict(cfg.seeds)},
    )
    save_bundle(bundle, store)
    _record(store, cfg, "fit", {"q": bundle.q})


def observation_seeds(cfg: PipelineConfig, n_cases: int) -> dict:
    """Independent noise and chain seeds for every (suite, case) pair."""
    noise = np.random.SeedSequence(cfg.seeds.noise).spawn(len(SUITES))
    mcmc = np.random.SeedSequence(cfg.seeds.mcmc).spawn(len(SUITES) * n_cases)
    out = {}
    for s, suite in enumerate(SUITES):
        out[suite] = {
            "noise": int(noise[s].generate_state(1)[0]),
            "mcmc": [int(mcmc[s * n_cases + k].generate_state(1)[0]) for k in range(n_cases)],
        }
    return out


def noisy_observations(store: ArtifactStore, cfg: PipelineConfig, stats) -> dict[str, SpectrumSet]:
    """Standardized held-out spectra with seeded observation noise added."""
    test = _design(store, "test")
    seeds = observation_seeds(cfg, test.m)
    out = {}
    for suite, d in test_suites(test).items():
        clean = standardize(log_transform(_raw_set(store, f"raw/{suite}", d.points)), stats)
        out[suite] = add_noise(clean, NoiseModel(cfg.lambda_y, seeds[suite]["noise"]))
    return out


def parse_cases(case: str | None, n_cases: int) -> list[int]:
    if case is None or case == "all":
        return list(range(n_cases))
    try:
        cases = sorted({int(c) for c in str(case).split(",")})
    except ValueError as exc:
        raise ConfigError(f"--case takes 'all' or comma-separated indices, got {case!r}") from exc
    if not cases or cases[0] < 0 or cases[-1] >= n_cases:
        raise ConfigError(f"case indices must lie in [0, {n_cases - 1}]")
    return cases


def cmd_calibrate(
    store: ArtifactStore, cfg: PipelineConfig, force: bool = False, case: str | None = None
) -> None:
    """One chain per held-out observation in every suite, all advanced together."""
    _check_ready(store, cfg, "calibrate", force)
    bundle = load_bundle(store)
    n_cases = store.get_array("design/test").shape[0]
    cases = parse_cases(case, n_cases)
    seeds = observation_seeds(cfg, n_cases)
    obs = noisy_observations(store, cfg, bundle.stats)
    problems, chain_seeds, names = [], [], []
    for suite in SUITES:
        for k in cases:
            problems.append(CalibrationProblem.from_spectrum(bundle, obs[suite].column(k), cfg.lambda_y))
            chain_seeds.append(seeds[suite]["mcmc"][k])
            names.append(f"chains/{suite}_{k:02d}")
    chains = run_mcmc_many(problems, cfg.n_samples, chain_seeds)
    acceptance = {}
    for name, ch in zip(names, chains):
        store.put_array(name, np.column_stack([ch.samples, ch.log_posterior]))
        acceptance[name] = {"acceptance_rate": ch.acceptance_rate, "seed": ch.seed, "burn_in": ch.burn_in}
    _record(store, cfg, "calibrate", {"cases": cases, "chains": acceptance})


def load_chains(store: ArtifactStore, suite: str) -> dict[int, Chain]:
    rec = store.stage("calibrate")
    if rec is None:
        raise StateError("no chains found; run `specal calibrate` first")
    out = {}
    for k in rec["cases"]:
        name = f"chains/{suite}_{k:02d}"
        a = store.get_array(name)
        meta = rec["chains"][name]
        out[k] = Chain(a[:, :-1], a[:, -1], meta["acceptance_rate"], meta["seed"], meta["burn_in"])
    return out


def cmd_evaluate(store: ArtifactStore, cfg: PipelineConfig, force: bool = False) -> None:
    _check_ready(store, cfg, "evaluate", force)
    bundle = load_bundle(store)
    test = _design(store, "test")
    truth = standardize(log_transform(_raw_set(store, "raw/test", test.points)), bundle.stats)
    mean, _ = bundle.predict_weights(test.points)
    emulated = bundle.basis.K @ mean.T  # standardized scale
    emu = emulator_report(emulated, truth.matrix, bundle.stats, test.points)
    cases = store.stage("calibrate")["cases"]
    chains = load_chains(store, "test")
    report_dir = store.root / "reports"
    emu, cal, files = build_reports(
        emu,
        test.points[cases],
        [chains[k] for k in cases],
        report_dir,
        sodium_chains=list(load_chains(store, "pure_na").values()),
        copper_chains=list(load_chains(store, "pure_cu").values()),
        seed=cfg.seeds.mcmc,
        case_labels=cases,
    )
    summary = {
        "emulator": {
            "fraction_within_2pct": emu.fraction_within(2.0),
            "fraction_within_1pct": emu.fraction_within(1.0),
            "fraction_r2_above_0.9": emu.fraction_r2_above(0.9),
            "median_abs_percent_error": [float(v) for v in emu.median_abs_percent_error],
        },
        "calibration": {
            "cases": [
                {"case": k, "truth": [float(v) for v in c.truth], **c.summary.to_dict()}
                for k, c in zip(cases, cal.cases)
            ],
            "na_frac_within_0.05": cal.recovered(2, 0.05),
            "t_within_0.15": cal.recovered(0, 0.15),
            "log10_rho_within_0.15": cal.recovered(1, 0.15),
            "pure_na_posterior_mean": [float(v) for v in cal.pure_sodium],
            "pure_cu_posterior_mean": [float(v) for v in cal.pure_copper],
        },
    }
    atomic_write_text(report_dir / "summary.json", dumps_json(summary))
    rel = sorted(str(Path(f).relative_to(store.root)) for f in files) + ["reports/summary.json"]
    _record(store, cfg, "evaluate", {"files": rel})


STAGE_FUNCTIONS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
}


def run_all(cfg: PipelineConfig, out=None, force: bool = False) -> ArtifactStore:
    store = ArtifactStore(out or cfg.out)
    for name in STAGES:
        STAGE_FUNCTIONS[name](store, cfg, force=force)
    return store
