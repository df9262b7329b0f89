import numpy as np
import pytest

from bknni.dataset import Dataset


def make_dataset(x, y, weights=None, ids=None, extra_aux=None):
    """Build a Dataset from a 1-D auxiliary column and a y list.

    ``None`` entries of y mark nonrespondents.  A constant column is
    prepended; ``extra_aux`` columns (if given) come after x.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    cols = [np.ones(n), x]
    if extra_aux is not None:
        cols.extend(np.asarray(c, dtype=float) for c in extra_aux)
    aux = np.column_stack(cols)
    yarr = np.array([np.nan if v is None else float(v) for v in y])
    resp = np.array([0 if v is None else 1 for v in y], dtype=np.int8)
    if weights is None:
        weights = np.ones(n)
    if ids is None:
        ids = np.arange(1, n + 1)
    return Dataset(np.asarray(ids), np.asarray(weights, dtype=float),
                   aux, yarr, resp)


@pytest.fixture(scope="session")
def mu284_case1():
    from bknni.dataset import load_mu284
    return load_mu284(1)


@pytest.fixture(scope="session")
def mu284_case2():
    from bknni.dataset import load_mu284
    return load_mu284(2)


@pytest.fixture(scope="session")
def mu284_response_case1(mu284_case1):
    """One reproducible 70% MAR response set on the Case 1 population."""
    from bknni.simulation import (_rng, calibrate_beta, gen_response,
                                  response_propensity)
    ds = mu284_case1
    beta = calibrate_beta(ds.aux[:, 1], 0.7)
    theta = np.clip(response_propensity(ds.aux[:, 1], beta), 1e-12, 1 - 1e-12)
    resp, _ = gen_response(theta, _rng(7, 0, 0), min_respondents=21)
    return ds.with_response(resp, ds.y)
