import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from magstep.errors import ValidationError
from magstep.estimators import INVARIANT_COLUMNS, AsymptoticExpansionRegressor, FiberInvariantsEstimator

HS = np.array([2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3])


def test_regressor_params_and_clone():
    reg = AsymptoticExpansionRegressor(exponents=(1.0, 1.5))
    assert reg.get_params() == {"exponents": (1.0, 1.5)}
    other = clone(reg)
    assert other is not reg and other.exponents == (1.0, 1.5)
    assert not hasattr(other, "coef_")


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(-0.5, 0.5), st.floats(-1.0, 1.0))
def test_regressor_recovers_planted(c0, c1, c2):
    y = c0 * HS + c1 * HS ** 1.5 + c2 * HS ** 1.75
    reg = AsymptoticExpansionRegressor().fit(HS[:, None], y)
    assert np.allclose(reg.coef_, [c0, c1, c2], rtol=0, atol=1e-7)
    assert reg.score(HS[:, None], y) == pytest.approx(1.0, abs=1e-12)


def test_regressor_validation():
    with pytest.raises(ValidationError):
        AsymptoticExpansionRegressor().fit([1e-2, 1e-2, 5e-3], [1.0, 1.0, 0.5])
    with pytest.raises(ValidationError):
        AsymptoticExpansionRegressor().fit([1e-2, -1e-2, 5e-3], [1.0, 1.0, 0.5])
    with pytest.raises(ValidationError):
        AsymptoticExpansionRegressor().fit([1e-2, 5e-3], [1.0])


def test_regressor_predict_requires_fit():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        AsymptoticExpansionRegressor().predict([1e-2])


def test_invariants_transformer(oracle):
    est = FiberInvariantsEstimator(n_points=4001, extrapolate=False)
    assert clone(est).get_params() == est.get_params()
    out = est.fit_transform(np.array([[-0.5], [-1.0], [-0.5]]))
    assert out.shape == (3, len(INVARIANT_COLUMNS))
    assert np.array_equal(out[0], out[2])
    beta = out[:, INVARIANT_COLUMNS.index("beta_a")]
    assert beta[1] == pytest.approx(0.5901, abs=2e-3)
    assert 0.5 * 0.5901 < beta[0] < 0.5
    # values outside the fitted set are computed on demand
    assert est.transform([[-0.9]]).shape == (1, len(INVARIANT_COLUMNS))
