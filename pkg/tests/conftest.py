import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wtnn.network import CovariatePartition, build_arch, init_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_spec(d=3, widths=(4, 3), oa=None, **kw):
    from wtnn.network import ArchSpec

    oa = tuple(range(d)) if oa is None else tuple(oa)
    rest = tuple(i for i in range(d) if i not in oa)
    return ArchSpec(widths=widths, partition=CovariatePartition(oa, rest, (), d), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def recovery_arch():
    return build_arch(2000, 5, depth=3)


@pytest.fixture
def random_net(rng):
    spec = small_spec()
    return spec, init_params(spec, rng, weight_scale=0.5, bias_scale=0.5)
