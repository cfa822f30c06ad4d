"""scikit-learn style wrappers for the two fitting workflows."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ValidationError
from .fiber import Grid1D
from .invariants import compute_invariants

INVARIANT_COLUMNS = ("beta_a", "zeta_a", "M2", "M3", "I2", "c2")


class AsymptoticExpansionRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of lambda(h) = sum_j c_j h^(p_j).

    Parameters
    ----------
    exponents : tuple of float
        Powers of h in the model; the default is the three-term expansion
        h, h^(3/2), h^(7/4).

    Attributes
    ----------
    coef_ : ndarray
        One coefficient per exponent.
    """

    def __init__(self, exponents=(1.0, 1.5, 1.75)):
        self.exponents = exponents

    def _design(self, h):
        h = np.asarray(h, dtype=float).reshape(-1)
        if np.any(h <= 0):
            raise ValidationError("h must be positive")
        return np.column_stack([h ** p for p in self.exponents])

    def fit(self, X, y):
        h = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if h.size != y.size:
            raise ValidationError("X and y differ in length")
        if np.unique(h).size < len(self.exponents):
            raise ValidationError(f"need at least {len(self.exponents)} distinct h values")
        # scale columns so that the small powers do not dominate the conditioning
        B = self._design(h)
        norms = np.linalg.norm(B, axis=0)
        sol = np.linalg.lstsq(B / norms, y, rcond=None)[0]
        self.coef_ = sol / norms
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self._design(X) @ self.coef_


class FiberInvariantsEstimator(TransformerMixin, BaseEstimator):
    """Maps field ratios a to the spectral invariants of the fiber problem.

    ``fit`` computes and stores the invariants for every a in ``X``;
    ``transform`` returns the columns of :data:`INVARIANT_COLUMNS`.
    """

    def __init__(self, half_length=20.0, n_points=4001, extrapolate=True):
        self.half_length = half_length
        self.n_points = n_points
        self.extrapolate = extrapolate

    def _compute(self, a):
        g = Grid1D(self.half_length, self.n_points)
        return compute_invariants(float(a), g, extrapolate=self.extrapolate)

    def fit(self, X, y=None):
        a = np.asarray(X, dtype=float).reshape(-1)
        self.invariants_ = {float(v): self._compute(v) for v in np.unique(a)}
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "invariants_")
        rows = []
        for v in np.asarray(X, dtype=float).reshape(-1):
            inv = self.invariants_.get(float(v))
            if inv is None:
                inv = self._compute(v)
                self.invariants_[float(v)] = inv
            rows.append([getattr(inv, c) for c in INVARIANT_COLUMNS])
        return np.array(rows)
