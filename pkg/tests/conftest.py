import numpy as np
import pytest

from covbalance import BandwidthState, CovariateSet


def make_bandwidth(inverse, n: int = 10) -> BandwidthState:
    """Bandwidth state straight from an explicit inverse matrix."""
    inverse = np.atleast_2d(np.asarray(inverse, dtype=np.float64))
    return BandwidthState(
        inverse=inverse,
        log_det_neg_half=0.5 * float(np.linalg.slogdet(inverse)[1]),
        n=n,
        shrinkage_weight=0.0,
        stats=None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_bandwidth():
    return make_bandwidth([[1.0]])


_counter = [0]


def random_covariates(rng, n, p, scale=1.0, offset=0.0, prefix=None):
    if prefix is None:
        _counter[0] += 1
        prefix = f"t{_counter[0]}_"
    return CovariateSet.from_values(
        offset + scale * rng.normal(size=(n, p)), id_prefix=prefix
    )
