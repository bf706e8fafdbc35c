import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from wtnn import weibull
from wtnn.network import effective_params, trainable_names
from wtnn.simulator import (CovariatePool, SimConfig, allocate_missions, cos_alignment, parameter_vector,
                            simulate_dataset, simulate_params, smdape, truncated_normal)


def test_config_defaults_and_validation():
    cfg = SimConfig()
    assert cfg.vehicles == 105
    assert cfg.name == "SIM-5-2-2000-3-0.05"
    assert cfg.arch().widths == (11, 6, 3)
    for bad in ({"Delta": 1.0}, {"alpha_tilde": 1.0}, {"d_n": 6}, {"N_s": 3000}):
        with pytest.raises(ValueError):
            SimConfig(**bad)


def test_truncated_normal_moments():
    x = truncated_normal(np.random.default_rng(0), 0.1, 0.1, 10_000)
    assert np.all(x > 0)
    # closed-form mean mu + sigma * phi(a) / (1 - Phi(a)) with a = -mu / sigma
    a = -1.0
    mean = 0.1 + 0.1 * stats.norm.pdf(a) / (1 - stats.norm.cdf(a))
    assert mean == pytest.approx(stats.truncnorm(a, np.inf, loc=0.1, scale=0.1).mean())
    assert mean == pytest.approx(0.12876, abs=1e-5)
    se = stats.truncnorm(a, np.inf, loc=0.1, scale=0.1).std() / np.sqrt(x.size)
    assert abs(x.mean() - mean) < 3 * se


def test_simulate_params_reproducible_and_positive():
    spec = SimConfig().arch()
    p1 = simulate_params(spec, np.random.default_rng(3))
    p2 = simulate_params(spec, np.random.default_rng(3))
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    eff = effective_params(p1, spec)
    for name in trainable_names(spec):
        if name.endswith("weight"):
            assert np.all(eff[name] > 0), name


def test_bias_draws_centered_at_ten():
    spec = SimConfig(d_a=5, n_s=20000, L_s=3).arch()
    biases = []
    rng = np.random.default_rng(1)
    while sum(b.size for b in biases) < 2000:
        eff = effective_params(simulate_params(spec, rng), spec)
        biases += [np.ravel(eff[n]) for n in trainable_names(spec) if n.endswith("bias")]
    b = np.concatenate(biases)
    assert abs(b.mean() - 10) < 3 * 5 / np.sqrt(b.size)


def test_allocate_missions():
    rng = np.random.default_rng(2)
    assert allocate_missions(37, 1, rng).tolist() == [37]
    counts = allocate_missions(10_000, 10, rng)
    assert counts.sum() == 10_000
    assert np.all(np.abs(counts - 1000) < 3 * np.sqrt(10_000 * 0.1 * 0.9))
    with pytest.raises(ValueError):
        allocate_missions(5, 0, rng)


def test_no_censoring_when_delta_zero():
    gt = simulate_dataset(SimConfig(n_s=500, Delta=0.0, seed=1))
    assert np.all(gt.dataset.delta == 1)
    assert np.array_equal(gt.dataset.z, gt.t_uncensored)


def test_censoring_value_formula():
    assert weibull.quantile(0.9, 1.0, 1.0) == pytest.approx(-np.log(0.1), rel=1e-12)
    assert weibull.quantile(0.9, 1.0, 1.0) == pytest.approx(2.302585, abs=1e-6)


@pytest.fixture(scope="module")
def big_sim():
    return simulate_dataset(SimConfig(n_s=10_000, seed=11))


def test_censored_rows_sit_at_own_quantile(big_sim):
    ds = big_sim.dataset
    cens = ds.delta == 0
    assert cens.any()
    expected = weibull.quantile(0.9, big_sim.eta[cens], big_sim.beta[cens])
    assert np.array_equal(ds.z[cens], expected)


def test_censoring_fraction(big_sim):
    frac = 1 - big_sim.dataset.delta.mean()
    assert abs(frac - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 10_000)


def test_durations_transform_to_unit_exponential(big_sim):
    e = (big_sim.t_uncensored / big_sim.eta) ** big_sim.beta
    assert stats.kstest(e, "expon").pvalue > 0.01


def test_dataset_reproducible_and_vehicle_seeded():
    a = simulate_dataset(SimConfig(n_s=400, seed=5))
    b = simulate_dataset(SimConfig(n_s=400, seed=5))
    assert np.array_equal(a.dataset.z, b.dataset.z) and np.array_equal(a.dataset.X, b.dataset.X)
    assert a.dataset.n_vehicles <= SimConfig(n_s=400).vehicles
    c = simulate_dataset(SimConfig(n_s=400, seed=6))
    assert not np.array_equal(a.dataset.z, c.dataset.z)


def test_covariate_pool():
    cfg = SimConfig(n_s=50, N_s=5, seed=0)
    rows = np.random.default_rng(0).random((60, cfg.d_a))
    gt = simulate_dataset(cfg, covariate_source=CovariatePool(rows))
    assert len(gt.dataset) == 50
    assert set(map(tuple, gt.dataset.X)) <= set(map(tuple, rows))
    with pytest.raises(ValueError, match="exhausted"):
        simulate_dataset(cfg, covariate_source=CovariatePool(rows[:40]))


def test_parameter_vector_length():
    cfg = SimConfig()
    spec = cfg.arch()
    theta = parameter_vector(simulate_params(spec, np.random.default_rng(0)), spec)
    from wtnn.network import trainable_count

    assert theta.size == trainable_count(spec)


def test_smdape_and_cos_examples():
    theta = np.array([1.0, -2.0, 3.0])
    assert smdape([theta], theta) == 0
    assert smdape([2 * theta], theta) == pytest.approx(1 / 3)
    assert smdape([np.zeros(3)], np.zeros(3)) == 0
    assert cos_alignment([theta], theta) == pytest.approx(1)
    assert cos_alignment([-theta], theta) == pytest.approx(-1)
    assert cos_alignment([np.array([2.0, 1.0, 0.0])], theta) == pytest.approx(0)
    assert cos_alignment([np.zeros(3)], np.zeros(3)) == 1
    assert cos_alignment([np.zeros(3)], theta) == 0
    # median over estimates
    assert smdape([theta, 2 * theta, 3 * theta], theta) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        smdape([np.zeros(2)], theta)


# magnitudes near underflow would turn a scaled vector into exact zeros
elements = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-100)
vectors = arrays(np.float64, 4, elements=elements)


@given(vectors, vectors)
def test_smdape_symmetric(a, b):
    assert smdape([a], b) == pytest.approx(smdape([b], a), abs=1e-12)
    assert 0 <= smdape([a], b) <= 1 + 1e-12


@given(vectors, vectors, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cos_scale_invariant(a, b, s, t):
    assert cos_alignment([s * a], t * b) == pytest.approx(cos_alignment([a], b), abs=1e-9)
