import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from specal.design import latin_hypercube
from specal.emulator import fit_bundle
from specal.reduction import build_basis, fit_standardization, log_transform, standardize
from specal.surrogate import SurrogateConfig, simulate_batch

settings.register_profile(
    "specal", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("specal")


@pytest.fixture(scope="session")
def small_cfg():
    return SurrogateConfig(n_bins=128)


@pytest.fixture(scope="session")
def small_training(small_cfg):
    design = latin_hypercube(60, seed=11)
    raw = simulate_batch(design, small_cfg)
    logX = log_transform(raw)
    stats = fit_standardization(logX)
    return design, raw, logX, stats, standardize(logX, stats)


@pytest.fixture(scope="session")
def small_bundle(small_training):
    design, _, _, stats, Xstd = small_training
    basis = build_basis(Xstd, q=5)
    return fit_bundle(design.points, basis, stats, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_record():
    """Log one pass/fail line per acceptance criterion and return the verdict."""

    def record(number, title, passed, detail):
        line = f"criterion {number:2d}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
