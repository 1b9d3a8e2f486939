"""scikit-learn style wrappers around the Lyapunov function and occupation densities."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ergodics import OccupationHistogram
from .lyapunov import DEFAULT_CTIL1, DEFAULT_CTIL2, DEFAULT_DELTA, GlobalLyapunov, choose_constants

JET_COLUMNS = ("V", "V_x", "V_y", "V_xx", "V_yy", "V_xy")


def _points(X):
    return check_array(X, dtype=np.float64, ensure_min_features=2, ensure_all_finite=True)[:, :2]


class SuperLyapunovFunction(TransformerMixin, BaseEstimator):
    """Auto-tuned super-Lyapunov function as a transformer of planar points.

    ``fit`` chooses ``alpha`` and ``rho`` and (by default) certifies the
    result; the training data are not used, since the function depends only
    on the model constants.  ``transform`` returns the value and partials of
    ``V`` as six columns (see ``JET_COLUMNS``) and ``predict`` returns ``V``.

    Parameters
    ----------
    delta : float
        Shape exponent in ``(0, 2/5)``.
    sigma_x, sigma_y : float
        Noise intensities.
    ctil1, ctil2 : float
        Shape constants of the exit-region piece.
    alpha_min : float
        Lower bound for ``alpha``.
    certify : bool
        Run the grid certification while tuning.

    Attributes
    ----------
    spec_ : LyapunovSpec
    g_ : BvpSolution
    report_ : VerificationReport or None
    V_ : GlobalLyapunov
    """

    def __init__(self, delta=DEFAULT_DELTA, sigma_x=1.0, sigma_y=1.0, ctil1=DEFAULT_CTIL1, ctil2=DEFAULT_CTIL2, alpha_min=0.0, certify=True):
        self.delta = delta
        self.sigma_x = sigma_x
        self.sigma_y = sigma_y
        self.ctil1 = ctil1
        self.ctil2 = ctil2
        self.alpha_min = alpha_min
        self.certify = certify

    def fit(self, X=None, y=None):
        if X is not None:
            _points(X)
        spec, g, report, log = choose_constants(
            self.delta, self.sigma_x, self.sigma_y, self.ctil1, self.ctil2, self.alpha_min, certify_fn=None if self.certify else False
        )
        self.spec_ = report.spec if report is not None else spec
        self.g_ = g
        self.report_ = report
        self.tuning_log_ = log
        self.V_ = GlobalLyapunov(self.spec_, g)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "V_")
        jet = self.V_.jet(_points(X))
        return np.column_stack([jet.value, jet.dx, jet.dy, jet.dxx, jet.dyy, jet.dxy])

    def predict(self, X):
        check_is_fitted(self, "V_")
        return self.V_.value(_points(X))

    def get_feature_names_out(self, input_features=None):
        return np.array(JET_COLUMNS, dtype=object)


class OccupationDensity(BaseEstimator):
    """Histogram density estimate of planar samples.

    ``fit`` bins the rows of ``X``; ``predict`` returns the density of the bin
    containing each query point (zero outside the window).
    """

    def __init__(self, window=(-6.0, 6.0, -6.0, 6.0), bins=(200, 200)):
        self.window = window
        self.bins = bins

    def fit(self, X, y=None):
        P = _points(X)
        hist = OccupationHistogram(tuple(self.window), tuple(self.bins))
        hist.add(P[:, 0], P[:, 1])
        self.histogram_ = hist
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "histogram_")
        P = _points(X)
        h = self.histogram_
        x0, x1, y0, y1 = h.window
        nx, ny = h.bins
        i = np.floor((P[:, 0] - x0) / (x1 - x0) * nx).astype(int)
        j = np.floor((P[:, 1] - y0) / (y1 - y0) * ny).astype(int)
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        out = np.zeros(P.shape[0])
        out[inside] = h.density()[i[inside], j[inside]]
        return out

    def score(self, X, y=None):
        """Mean log density of ``X`` (``-inf`` if any point falls in an empty bin)."""
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(self.predict(X))))
