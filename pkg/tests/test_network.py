import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_spec
from wtnn import network as net
from wtnn.network import ArchSpec, CovariatePartition, SizingError
from wtnn.weibull import BETA0

SIZING_D10 = [  # n, L, widths, n/p_n  (d=10, K=128, rho=tau=0.5)
    (500, 3, (10, 5, 3), 3),
    (1000, 4, (10, 5, 3, 2), 5),
    (10_000, 4, (13, 7, 4, 2), 36),
    (100_000, 5, (17, 9, 5, 3, 2), 238),
    (1_000_000, 5, (22, 11, 6, 3, 2), 1689),
]

SIZING_D37 = [  # n, L, widths, n/p_n  (d=37, K=2030; depths fixed by hand)
    (5000, 2, (46, 23), 3),
    (8000, 2, (48, 24), 4),
    (9000, 2, (49, 25), 5),
    (8000, 3, (48, 24, 12), 3),
    (9000, 3, (49, 25, 13), 3),
    (9000, 4, (49, 25, 13, 7), 3),
    (10_000, 5, (49, 25, 13, 7, 4), 3),
    (100_000, 6, (64, 32, 16, 8, 4, 2), 19),
    (1_000_000, 6, (86, 43, 22, 11, 6, 3), 120),
]


def _arch(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return net.build_arch(*args, **kw)


@pytest.mark.parametrize("n,L,widths,ratio", SIZING_D10)
def test_sizing_rows_d10(n, L, widths, ratio):
    spec = _arch(n, 10, K=128, rho=0.5, tau=0.5)
    assert spec.depth == L and spec.widths == widths
    assert round(n / net.param_count(spec)) == ratio


@pytest.mark.parametrize("n,L,widths,ratio", SIZING_D37)
def test_sizing_rows_d37(n, L, widths, ratio):
    spec = _arch(n, 37, K=2030, depth=L)
    assert spec.widths == widths
    assert round(n / net.param_count(spec)) == ratio


def test_param_count_examples():
    assert net.param_count(small_spec(d=10, widths=(13, 7, 4, 2))) == 277
    assert net.param_count(small_spec(d=10, widths=(10, 5, 3))) == 171
    assert net.param_count(small_spec(d=1, widths=(2,))) == 8


def test_trainable_count_includes_heads():
    spec = small_spec(d=10, widths=(13, 7, 4, 2))
    # the sieve formula leaves out the last layer (2 x (4 + 1)) and the two head biases
    assert net.trainable_count(spec) == 277 + 2 * (4 + 1) + 2


def test_k0_examples():
    assert net.k0(1, math.e) == pytest.approx(2 * math.e ** (-1 / 3), rel=1e-12)
    assert net.k0(10, 500) == pytest.approx(156.6, abs=0.05)
    assert net.k0(0, 10) == 0


def test_sizing_errors_and_warning():
    with pytest.raises(SizingError):
        net.build_arch(2, 3)
    with pytest.raises(SizingError):
        _arch(10_000, 40, K=128)
    assert net.k0(3, 500) > 10
    with pytest.warns(UserWarning):
        net.build_arch(10_000, 3, K=10, n_min=500)


@given(st.integers(100, 10**7), st.floats(20, 3000), st.floats(0.2, 0.8), st.floats(0.2, 0.8))
def test_widths_strictly_decreasing(n, K, rho, tau):
    widths = net.layer_widths(n, K, rho, tau)
    assert all(w >= 2 for w in widths)
    assert all(a > b for a, b in zip(widths, widths[1:]))


def test_partition_validation():
    with pytest.raises(ValueError):
        CovariatePartition((0, 1), (1,), (), 2)
    with pytest.raises(ValueError):
        CovariatePartition((0,), (), (), 2)


def _hand_net(x_val=0.0):
    spec = ArchSpec(widths=(1,), partition=CovariatePartition((0,), (), (), 1), beta_min=1.0, beta_max=5.0)
    eff = {"layer1.weight": np.array([[1.0]]), "layer1.bias": np.array([0.0]),
           "beta_head.weight": np.array([1.0]), "beta_head.bias": np.array(0.0),
           "eta_head.weight": np.array([0.7]), "eta_head.bias": np.array(0.2)}
    return spec, net.free_from_effective(eff, spec)


def test_hand_net():
    spec, params = _hand_net()
    out = net.forward(params, spec, np.array([0.0]))
    h = math.log(2)
    beta = 1 + 4 / (1 + math.exp(-h))
    assert out.beta == pytest.approx(beta, abs=1e-12)
    assert out.beta == pytest.approx(3.6667, abs=1e-4)
    assert out.beta > BETA0 and out.mask == 1.0
    eta = 1 + math.log1p(math.exp(-0.7 * h + 0.2))
    assert out.eta == pytest.approx(eta, abs=1e-12)


def test_forward_validation(random_net):
    spec, params = random_net
    with pytest.raises(ValueError):
        net.forward(params, spec, np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        net.forward(params, spec, np.zeros(4))


def test_batch_equals_single_and_permutes(random_net, rng):
    spec, params = random_net
    X = rng.normal(size=(7, 3))
    out = net.forward_batch(params, spec, X)
    one = net.forward(params, spec, X[2])
    assert one.eta == pytest.approx(out.eta[2], rel=1e-14) and one.beta == pytest.approx(out.beta[2], rel=1e-14)
    perm = rng.permutation(7)
    out_p = net.forward_batch(params, spec, X[perm])
    assert np.array_equal(out_p.eta, out.eta[perm]) and np.array_equal(out_p.beta, out.beta[perm])


@given(st.integers(0, 10_000), st.floats(-1e6, 1e6))
def test_output_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    spec = small_spec(beta_min=1.5, beta_max=4.0, eta_min=0.5)
    params = net.init_params(spec, rng, weight_scale=2.0, bias_scale=2.0)
    X = rng.normal(size=(5, 3)) * scale
    out = net.forward_batch(params, spec, X)
    assert np.all(out.beta >= 1.5) and np.all(out.beta <= 4.0) and np.all(out.eta >= 0.5)
    assert np.array_equal(out.mask, (out.beta > spec.beta_threshold).astype(float))


def _monotone_pair(rng, spec):
    x1 = rng.normal(size=spec.d) * 2
    x2 = x1.copy()
    oa = list(spec.partition.oa_indices)
    x2[oa] += rng.exponential(1.0, size=len(oa)) * (rng.random(len(oa)) < 0.7)
    return x1, x2


@pytest.mark.parametrize("head_style", ["linear", "mini_mlp"])
def test_architectural_monotonicity(head_style):
    rng = np.random.default_rng(99)
    beta_bad = eta_bad = stable = 0
    for _ in range(300):
        spec = small_spec(d=4, widths=(5, 3), oa=(0, 2), head_style=head_style)
        params = net.init_params(spec, rng, weight_scale=rng.uniform(0.1, 3), bias_scale=rng.uniform(0.1, 2))
        x1, x2 = _monotone_pair(rng, spec)
        o1, o2 = net.forward(params, spec, x1), net.forward(params, spec, x2)
        beta_bad += o2.beta < o1.beta - 1e-12
        if o1.mask == o2.mask == 1:
            stable += 1
            eta_bad += o2.eta > o1.eta + 1e-12
    assert beta_bad == 0 and eta_bad == 0
    assert stable > 0


def test_init_params_contract(rng):
    spec = small_spec()
    a = net.init_params(spec, np.random.default_rng(4))
    b = net.init_params(spec, np.random.default_rng(4))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    zero = net.effective_params(net.init_params(spec, rng, weight_scale=0.0), spec)
    for name in net.param_names(spec):
        if name.endswith("weight"):
            assert np.all(np.abs(zero[name]) <= 1.0001e-8)
    # small-weight regime: weights are orders of magnitude below biases
    ratios = []
    for seed in range(1000):
        eff = net.effective_params(net.init_params(spec, np.random.default_rng(seed)), spec)
        w = max(np.abs(eff[n]).max() for n in eff if n.endswith("weight"))
        bias = min(np.abs(eff[n]).min() for n in eff if n.endswith("bias"))
        ratios.append(w / bias)
    assert np.median(ratios) < 0.1


def test_effective_roundtrip(random_net):
    spec, params = random_net
    back = net.free_from_effective(net.effective_params(params, spec), spec)
    for name in params:
        assert np.allclose(back[name], params[name], rtol=1e-9, atol=1e-12)
    eff = net.effective_params(params, spec)
    assert np.all(eff["layer2.weight"] > 0) and np.all(eff["beta_head.weight"] > 0)


def test_flatten_roundtrip(random_net):
    spec, params = random_net
    vec = net.flatten(params, spec)
    back = net.unflatten(vec, spec)
    assert all(np.array_equal(back[k], params[k]) for k in back)


def test_dropout_rate_zero_is_identity(random_net, rng):
    spec, params = random_net
    X = rng.normal(size=(6, 3))
    base = net.forward_batch(params, spec, X)
    masks = net.sample_dropout_masks(spec, 6, rng)
    dropped = net.forward_batch(params, spec, X, masks)
    assert np.array_equal(base.eta, dropped.eta) and np.array_equal(base.beta, dropped.beta)


def test_dropout_rescales_kept_units(rng):
    spec = small_spec(widths=(3,), dropout_rate=0.5)
    params = net.init_params(spec, rng, 0.5, 0.5)
    X = rng.normal(size=(1, 3))
    g_full = net.build_graph(params, spec, X)
    masks = [np.array([[1.0, 0.0, 1.0]])]
    g_drop = net.build_graph(params, spec, X, dropout_masks=masks)
    assert np.allclose(g_drop.hidden.value, g_full.hidden.value * np.array([2.0, 0.0, 2.0]))


def test_batch_norm_cancels_layer_scale(rng):
    spec = small_spec(widths=(4, 3), use_batch_norm=True, positive_weights=False)
    params = net.init_params(spec, rng, 0.5, 0.5)
    X = rng.normal(size=(32, 3))
    scaled = dict(params)
    scaled["layer1.weight"] = params["layer1.weight"] * 10
    a = net.build_graph(params, spec, X, training=True)
    b = net.build_graph(scaled, spec, X, training=True)
    # equal up to the variance epsilon of the normalization
    assert np.allclose(a.hidden.value, b.hidden.value, atol=1e-4)
    assert set(a.bn_stats) == {"layer1", "layer2"}


def test_spec_dict_roundtrip():
    spec = small_spec(head_style="mini_mlp", dropout_rate=0.1)
    assert ArchSpec.from_dict(spec.to_dict()) == spec
