import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from superlyap.estimators import JET_COLUMNS, OccupationDensity, SuperLyapunovFunction


@pytest.fixture(scope="module")
def fitted():
    return SuperLyapunovFunction(certify=False).fit()


def test_transform_columns_match_global_function(fitted, rng):
    Z = rng.uniform(-20, 20, (200, 2))
    out = fitted.transform(Z)
    assert out.shape == (200, 6)
    np.testing.assert_allclose(out[:, 0], fitted.V_.value(Z))
    np.testing.assert_allclose(fitted.predict(Z), out[:, 0])
    assert list(fitted.get_feature_names_out()) == list(JET_COLUMNS)


def test_fit_ignores_data_but_validates(fitted):
    other = SuperLyapunovFunction(certify=False).fit(np.zeros((3, 2)))
    assert other.spec_.alpha == fitted.spec_.alpha
    with pytest.raises(ValueError):
        SuperLyapunovFunction(certify=False).fit(np.array([[np.nan, 0.0]]))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SuperLyapunovFunction().transform(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        OccupationDensity().predict(np.zeros((1, 2)))


def test_params_and_clone():
    est = SuperLyapunovFunction(delta=0.25, certify=False)
    assert est.get_params()["delta"] == 0.25
    twin = clone(est)
    assert twin is not est and twin.get_params() == est.get_params()


def test_occupation_density(rng):
    X = rng.normal(size=(50_000, 2))
    est = OccupationDensity(window=(-4, 4, -4, 4), bins=(40, 40)).fit(X)
    d = est.predict(np.array([[0.0, 0.0], [10.0, 0.0]]))
    assert d[0] == pytest.approx(1 / (2 * np.pi), rel=0.15)
    assert d[1] == 0.0
    assert np.isfinite(est.score(rng.normal(size=(100, 2)) * 0.5))
    assert est.score(np.array([[10.0, 10.0]])) == -np.inf
