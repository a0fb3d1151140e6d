import json

import numpy as np
import pytest

from specal.cli import EXIT_INTEGRITY, EXIT_OK, EXIT_USAGE, main
from specal.pipeline import STAGES, PipelineConfig, stage_hash
from specal.store import ArtifactStore

SMALL = {"m_train": 40, "m_test": 25, "q": 4, "n_samples": 200, "n_bins": 64}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_design_command_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert run("design", "--m", 500, "--seed", 1, "--kind", "training", "--out", out) == EXIT_OK
    lines = (out / "design_training.csv").read_text().splitlines()
    assert len(lines) == 501
    rec = ArtifactStore(out).stage("design")
    assert rec["settings"]["m_train"] == 500 and rec["seeds"]["design_train"] == 1


def test_design_seed_needs_kind(tmp_path):
    assert run("design", "--seed", 3, "--out", tmp_path) == EXIT_USAGE


def test_missing_predecessor_is_reported(tmp_path, capsys):
    assert run("fit", "--out", tmp_path) == EXIT_USAGE
    assert "specal reduce" in capsys.readouterr().err


def test_bad_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("fit", "--bogus")
    assert exc.value.code == EXIT_USAGE


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"m_tarin": 10}))
    assert run("design", "--config", path, "--out", tmp_path / "o") == EXIT_USAGE


def test_stages_in_order_with_staleness_check(tmp_path, small_config):
    out = tmp_path / "o"
    common = ["--config", small_config, "--out", out]
    for stage in ("design", "simulate", "reduce"):
        assert run(stage, *common) == EXIT_OK
    # fitting on top of a basis built with another q is refused...
    assert run("fit", *common, "--q", 5) == EXIT_USAGE
    # ...unless forced
    assert run("fit", *common, "--q", 5, "--force") == EXIT_OK
    assert run("reduce", *common) == EXIT_OK
    assert ArtifactStore(out).stage("fit") is None  # invalidated by the new reduce
    assert run("fit", *common, "--q", 4) == EXIT_OK
    assert run("calibrate", *common, "--case", "all", "--samples", 200, "--lambda-y", 4) == EXIT_OK
    store = ArtifactStore(out)
    chains = [n for n in store.manifest["arrays"] if n.startswith("chains/")]
    assert len(chains) == 75
    assert sum(n.startswith("chains/test_") for n in chains) == 25
    assert store.get_array("chains/pure_na_03").shape == (200, 4)
    assert run("evaluate", *common) == EXIT_OK
    assert (out / "reports" / "emulator_metrics.csv").exists()


def test_corrupted_artifact_exit_code(tmp_path, small_config):
    out = tmp_path / "o"
    common = ["--config", small_config, "--out", out]
    for stage in ("design", "simulate", "reduce"):
        assert run(stage, *common) == EXIT_OK
    path = out / "arrays" / "reduce" / "K.f8"
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    assert run("fit", *common) == EXIT_INTEGRITY


def test_run_all_is_byte_identical(tmp_path, small_config):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run("run-all", "--config", small_config, "--out", d) == EXIT_OK
    files_a = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


def test_every_stage_carries_provenance(tmp_path, small_config):
    out = tmp_path / "o"
    assert run("run-all", "--config", small_config, "--out", out) == EXIT_OK
    store = ArtifactStore(out)
    cfg = PipelineConfig.from_json(small_config)
    for stage in STAGES:
        rec = store.stage(stage)
        assert rec["config_hash"] == stage_hash(cfg, stage)
        assert rec["seeds"] == {"design_train": 1, "design_test": 2, "noise": 3, "mcmc": 4, "mle": 5}
    assert store.manifest["arrays"]["emulator/K"]["shape"] == [64, 4]
    for name in ("emulator_metrics.csv", "calibration_scatter.csv", "single_element_hist.csv"):
        assert (out / "reports" / name).exists()
    assert len(list((out / "reports").glob("pairwise_samples_*.csv"))) == 2


def test_rerunning_a_stage_is_idempotent(tmp_path, small_config):
    out = tmp_path / "o"
    common = ["--config", small_config, "--out", out]
    for stage in ("design", "simulate", "reduce"):
        assert run(stage, *common) == EXIT_OK
    before = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
    assert run("reduce", *common) == EXIT_OK
    after = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
    assert before == after


def test_seed_flags_override_config(small_config):
    from specal.cli import build_parser, config_from_args

    args = build_parser().parse_args(
        ["calibrate", "--config", str(small_config), "--seed-mcmc", "99", "--samples", "10"]
    )
    cfg = config_from_args(args)
    assert cfg.seeds.mcmc == 99 and cfg.n_samples == 10 and cfg.m_train == 40


def test_config_validation():
    from specal.pipeline import ConfigError

    with pytest.raises(ConfigError):
        PipelineConfig(q=0)
    with pytest.raises(ConfigError):
        PipelineConfig(m_train=10, q=20)
    with pytest.raises(ConfigError):
        PipelineConfig(lambda_y=-1.0)


def test_default_config_file_matches_defaults():
    from pathlib import Path

    cfg = PipelineConfig.from_json(Path(__file__).parents[1] / "configs" / "default.json")
    assert (cfg.m_train, cfg.m_test, cfg.q, cfg.lambda_y, cfg.n_samples) == (500, 25, 15, 4.0, 15000)
    assert cfg.surrogate_config().n_bins == 2048
    np.testing.assert_equal(cfg.surrogate_config().grid.span, (250.0, 900.0))
