import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as sps

from specal.calibration import (
    CalibrationProblem,
    Chain,
    GridPosterior,
    _log_proposal_density,
    grid_posterior,
    histogram_marginal,
    log_likelihood,
    log_likelihood_many,
    log_posterior_many,
    log_prior,
    reflect,
    run_mcmc,
    run_mcmc_many,
    summarize,
    total_variation,
    zoomed_grid_posterior,
)
from specal.core import DomainError, Scale, ScaleError, to_native
from specal.design import latin_hypercube
from specal.reduction import log_transform, project, standardize
from specal.surrogate import NoiseModel, add_noise, simulate_batch


def dense_log_likelihood(bundle, w_obs, theta, precision):
    """Full-matrix Gaussian density built without the diagonal shortcut.

    Emulator moments come from the same batched predictor the fast path uses;
    agreement between prediction paths is checked separately in the emulator tests.
    """
    K = bundle.basis.K
    obs_cov = np.linalg.inv(precision * (K.T @ K))
    mean, var = bundle.predict_weights(np.atleast_2d(theta))
    cov = obs_cov + np.diag(var[0])
    return sps.multivariate_normal(mean=mean[0], cov=cov).logpdf(w_obs)


@pytest.fixture(scope="module")
def observations(small_bundle, small_cfg):
    test = latin_hypercube(6, seed=21, kind="test")
    clean = standardize(log_transform(simulate_batch(test, small_cfg)), small_bundle.stats)
    noisy = add_noise(clean, NoiseModel(4.0, seed=5))
    return test, noisy


def test_likelihood_matches_dense_oracle(small_bundle, rng):
    q = small_bundle.q
    for _ in range(100):
        theta = rng.random(3)
        w_obs = rng.standard_normal(q) * np.sqrt(small_bundle.basis.ktk_diag.max()) * 0.1
        pr = CalibrationProblem(small_bundle, w_obs, 4.0)
        assert abs(log_likelihood(pr, theta) - dense_log_likelihood(small_bundle, w_obs, theta, 4.0)) < 1e-8


def test_at_training_point_only_noise_and_nugget_remain(small_bundle):
    k = 7
    theta = small_bundle.inputs[k]
    w_obs = small_bundle.basis.W[:, k] + 0.01
    pr = CalibrationProblem(small_bundle, w_obs, 4.0)
    # the emulator reproduces W[:, k]; its variance there is the nugget floor sigma^2 * nu
    floor = np.array([em.hyper.variance * em.hyper.nugget for em in small_bundle.emulators])
    var = 1.0 / (4.0 * small_bundle.basis.ktk_diag) + floor
    expected = np.sum(sps.norm.logpdf(w_obs, small_bundle.basis.W[:, k], np.sqrt(var)))
    assert log_likelihood(pr, theta) == pytest.approx(expected, rel=1e-7)


def test_density_increases_with_precision_at_the_mean(small_bundle, rng):
    theta = rng.random(3)
    mu = small_bundle.predict(theta).mean
    lls = [log_likelihood(CalibrationProblem(small_bundle, mu, lam), theta) for lam in (0.5, 1, 4, 16)]
    assert np.all(np.diff(lls) > 0)


def test_problem_validation(small_bundle, observations):
    with pytest.raises(DomainError):
        CalibrationProblem(small_bundle, np.zeros(3))
    with pytest.raises(DomainError):
        CalibrationProblem(small_bundle, np.zeros(small_bundle.q), precision=0.0)
    test, noisy = observations
    with pytest.raises(ScaleError):
        raw = simulate_batch(test).column(0)
        CalibrationProblem.from_spectrum(small_bundle, raw)


@pytest.mark.parametrize(
    "theta, expected", [((0.5, 0.5, 0.5), 0.0), ((1.1, 0.5, 0.5), -np.inf), ((1, 1, 1), 0.0), ((0, 0, 0), 0.0)]
)
def test_prior(theta, expected):
    assert log_prior(theta) == expected


def test_posterior_outside_support(small_bundle):
    pr = CalibrationProblem(small_bundle, np.zeros(small_bundle.q))
    lp = log_posterior_many(pr, [[0.5, 0.5, 0.5], [0.5, -0.2, 0.5]])
    assert np.isfinite(lp[0]) and lp[1] == -np.inf


@given(arrays(np.float64, 7, elements=st.floats(-3.0, 4.0)))
def test_reflection_lands_in_cube(x):
    y = reflect(x)
    assert np.all((y >= 0) & (y <= 1))
    inside = (x >= 0) & (x <= 1)
    assert np.array_equal(y[inside], x[inside])


def test_reflected_proposal_density_is_normalised():
    cov = np.array([[0.01, 0.006, 0.0], [0.006, 0.012, 0.002], [0.0, 0.002, 0.005]])
    prec = np.linalg.inv(cov)
    frm = np.array([0.05, 0.93, 0.5])
    n = 48
    c = (np.arange(n) + 0.5) / n
    pts = np.stack(np.meshgrid(c, c, c, indexing="ij"), -1).reshape(-1, 3)
    logq = _log_proposal_density(pts, np.tile(frm, (len(pts), 1)), np.tile(prec, (len(pts), 1, 1)))
    norm = (2 * np.pi) ** 1.5 * np.sqrt(np.linalg.det(cov))
    assert np.sum(np.exp(logq)) / n**3 / norm == pytest.approx(1.0, abs=5e-3)


@pytest.fixture(scope="module")
def chains(small_bundle, observations):
    _, noisy = observations
    problems = [CalibrationProblem.from_spectrum(small_bundle, noisy.column(k)) for k in range(3)]
    return problems, run_mcmc_many(problems, 4000, [1, 2, 3])


def test_samples_stay_in_support(chains):
    for ch in chains[1]:
        assert np.all((ch.samples >= 0) & (ch.samples <= 1))
        assert len(ch) == 4000
        assert ch.burn_in == 800
        assert 0.1 < ch.acceptance_rate < 0.7


def test_chains_are_reproducible(chains):
    problems, runs = chains
    again = run_mcmc(problems[1], 4000, seed=2)
    assert again.samples.tobytes() == runs[1].samples.tobytes()


def test_chains_match_grid_oracle(chains):
    problems, runs = chains
    for pr, ch in zip(problems, runs):
        g = zoomed_grid_posterior(pr, resolution=30, coarse=16)
        for j in range(3):
            assert total_variation(histogram_marginal(ch.samples, g, j), g.marginal(j)) < 0.15


def test_flat_target_is_uniform(small_bundle):
    pr = CalibrationProblem(small_bundle, np.zeros(small_bundle.q), precision=1e-14)
    ch = run_mcmc(pr, 20_000, seed=9, initial=[[0.5, 0.5, 0.5]])
    for j in range(3):
        assert sps.kstest(ch.samples[:, j], "uniform").statistic < 0.05


def test_grid_normalisation_and_marginals(small_bundle, observations):
    _, noisy = observations
    pr = CalibrationProblem.from_spectrum(small_bundle, noisy.column(0))
    g = grid_posterior(pr, resolution=12)
    assert abs(g.mass.sum() - 1.0) < 1e-12
    for j in range(3):
        other = tuple(k for k in range(3) if k != j)
        by_axis = g.mass
        for ax in sorted(other, reverse=True):
            by_axis = by_axis.sum(axis=ax)
        np.testing.assert_allclose(g.marginal(j), by_axis, atol=1e-14)


def test_grid_argument_checks(small_bundle):
    pr = CalibrationProblem(small_bundle, np.zeros(small_bundle.q))
    with pytest.raises(DomainError):
        grid_posterior(pr, resolution=1)
    with pytest.raises(DomainError):
        grid_posterior(pr, resolution=4, bounds=[[0, 1], [0.5, 0.2], [0, 1]])


def test_total_variation_counts_escaped_mass():
    g = GridPosterior(np.full((2, 2, 2), 1 / 8), np.zeros((2, 2, 2)), np.array([[0, 0.5]] * 3))
    samples = np.array([[0.1, 0.1, 0.1], [0.9, 0.1, 0.1]])
    h = histogram_marginal(samples, g, 0)
    assert h.sum() == 0.5
    assert total_variation(h, g.marginal(0)) == pytest.approx(0.5)


def test_summary_of_constant_chain():
    s = np.tile([0.25, 0.5, 0.75], (100, 1))
    summ = summarize(Chain(s, np.zeros(100), 0.0, 0, 0))
    for a in (summ.mean, summ.median, summ.lower, summ.upper):
        np.testing.assert_array_equal(a, [0.25, 0.5, 0.75])


def test_summary_native_units_follow_the_affine_map(rng):
    s = rng.random((500, 3))
    summ = summarize(s)
    np.testing.assert_allclose(summ.native_mean, to_native(summ.mean).as_array(), atol=1e-14)
    np.testing.assert_allclose(summ.native_lower, to_native(summ.lower).as_array(), atol=1e-14)
    np.testing.assert_allclose(summ.native_upper, to_native(summ.upper).as_array(), atol=1e-14)
    assert summ.to_dict()["interval"] == [0.05, 0.95]


def test_chain_csv(tmp_path):
    ch = Chain(np.full((3, 3), 0.5), np.array([-1.0, -2.0, -3.0]), 0.5, 1, 10)
    path = tmp_path / "c.csv"
    ch.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,t,log10_rho,na_frac,log_post"
    assert lines[1].startswith("10,0.5")


def test_mcmc_argument_checks(small_bundle):
    pr = CalibrationProblem(small_bundle, np.zeros(small_bundle.q))
    with pytest.raises(DomainError):
        run_mcmc(pr, 0)
    with pytest.raises(DomainError):
        run_mcmc_many([pr, pr], 10, [1])


def test_weight_projection_shape(small_bundle, observations):
    _, noisy = observations
    pr = CalibrationProblem.from_spectrum(small_bundle, noisy.column(0))
    np.testing.assert_array_equal(pr.w_obs, project(noisy.column(0), small_bundle.basis))
    assert log_likelihood_many(pr, np.full((4, 3), 0.5)).shape == (4,)
