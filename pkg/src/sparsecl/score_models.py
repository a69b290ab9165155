"""Sub-likelihood score functions.

Each model describes ``p`` scalar sub-likelihood scores ``u_j(theta_j; y)``.
Every score depends on its own parameter only, so evaluation over a sample
is vectorised across both observations and components: ``score_matrix``
returns the ``n x p`` array of ``u_j(theta_j; Y^(i))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr

__all__ = [
    "ScoreModel",
    "GaussianLocationModel",
    "ProbitRegressionModel",
    "PairwiseCorrelationModel",
    "gaussian_score",
    "probit_score",
    "pairwise_corr_score",
    "pair_list",
    "norm_cdf",
    "norm_pdf",
]

_INV_SQRT_2PI = 0.3989422804014327
CORR_EPS = 1e-6


def norm_cdf(x):
    """Standard normal CDF (``scipy.special.ndtr``, full double precision)."""
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to score function")


def gaussian_score(theta_j, y_j, sigma2_j=1.0):
    """Marginal normal location score ``(y_j - theta_j) / sigma_j^2``."""
    theta_j, y_j = np.asarray(theta_j, float), np.asarray(y_j, float)
    _check_finite(theta_j, y_j)
    if np.any(np.asarray(sigma2_j) <= 0):
        raise ValueError("sigma2 must be positive")
    out = (y_j - theta_j) / sigma2_j
    return out if out.ndim else float(out)


def probit_score(theta_j, y_j, x_i, alpha=0.0):
    """Probit quasi-score ``(y - Phi(eta)) * phi(eta) * x`` with ``eta = alpha + theta*x``."""
    theta_j, y_j, x_i = (np.asarray(a, float) for a in (theta_j, y_j, x_i))
    _check_finite(theta_j, y_j, x_i)
    eta = alpha + theta_j * x_i
    out = (y_j - norm_cdf(eta)) * norm_pdf(eta) * x_i
    return out if out.ndim else float(out)


def pairwise_corr_score(theta_j, y1, y2):
    """Bivariate standard normal correlation score.

    ``(1 + t^2) y1 y2 - t (y1^2 + y2^2) + t (1 - t^2)``; this is the usual
    correlation score multiplied by ``(1 - t^2)^2``, which keeps it bounded
    as ``|t| -> 1`` without moving its root.
    """
    t, y1, y2 = (np.asarray(a, float) for a in (theta_j, y1, y2))
    _check_finite(t, y1, y2)
    if np.any(np.abs(t) >= 1.0):
        raise ValueError("correlation parameter must lie in (-1, 1)")
    out = (1.0 + t * t) * (y1 * y2) - t * (y1 * y1 + y2 * y2) + t * (1.0 - t * t)
    return out if out.ndim else float(out)


def pair_list(d: int) -> np.ndarray:
    """All pairs ``(j1, j2)``, ``j1 < j2``, in row-major upper-triangle order."""
    r, c = np.triu_indices(d, k=1)
    return np.column_stack([r, c])


class ScoreModel:
    """Base class for a collection of ``p`` scalar sub-likelihood scores.

    Subclasses implement :meth:`score_matrix` and usually
    :meth:`derivative_matrix`; the default derivative is a central finite
    difference. ``theta`` is always a length-``p`` vector and ``data`` an
    ``n x observation_dim`` array.
    """

    p: int
    observation_dim: int
    #: open parameter domain per component
    domain: Tuple[float, float] = (-np.inf, np.inf)

    def score_matrix(self, theta, data) -> np.ndarray:
        raise NotImplementedError

    def derivative_matrix(self, theta, data) -> np.ndarray:
        theta = np.asarray(theta, float)
        h = 1e-6 * np.maximum(1.0, np.abs(theta))
        up = self.score_matrix(theta + h, data)
        dn = self.score_matrix(theta - h, data)
        return (up - dn) / (2.0 * h)

    def score(self, j: int, theta_j: float, y, i: Optional[int] = None) -> float:
        """Score of component ``j`` for a single observation ``y``."""
        theta = np.zeros(self.p)
        theta[j] = theta_j
        return float(self._single(theta, y, i)[j])

    def score_derivative(self, j: int, theta_j: float, y, i: Optional[int] = None) -> float:
        theta = np.zeros(self.p)
        theta[j] = theta_j
        y = np.atleast_2d(np.asarray(y, float))
        return float(self._single_derivative(theta, y, i)[j])

    # single-observation helpers; models with covariates override these
    def _single(self, theta, y, i):
        return self.score_matrix(theta, np.atleast_2d(np.asarray(y, float)))[0]

    def _single_derivative(self, theta, y, i):
        return self.derivative_matrix(theta, y)[0]

    def initial_estimate(self, data) -> np.ndarray:
        return np.zeros(self.p)

    def validate(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != self.observation_dim:
            raise ValueError(
                f"expected data of shape (n, {self.observation_dim}), got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("data contain non-finite values")
        return data


@dataclass(frozen=True)
class GaussianLocationModel(ScoreModel):
    """Marginal scores of ``Y ~ N_p(theta, Sigma)`` with known variances."""

    p: int
    sigma2: Optional[np.ndarray] = None

    def __post_init__(self):
        s2 = np.ones(self.p) if self.sigma2 is None else np.asarray(self.sigma2, float)
        if s2.shape != (self.p,) or np.any(s2 <= 0):
            raise ValueError("sigma2 must be a vector of p positive reals")
        object.__setattr__(self, "sigma2", s2)

    @property
    def observation_dim(self) -> int:
        return self.p

    def score_matrix(self, theta, data):
        return (np.asarray(data, float) - np.asarray(theta, float)) / self.sigma2

    def derivative_matrix(self, theta, data):
        n = np.asarray(data).shape[0]
        return np.broadcast_to(-1.0 / self.sigma2, (n, self.p)).copy()

    def initial_estimate(self, data):
        return np.asarray(data, float).mean(axis=0)


@dataclass(frozen=True)
class ProbitRegressionModel(ScoreModel):
    """Marginal probit regressions ``P(Y_j = 1) = Phi(alpha + theta_j x)``.

    The intercept ``alpha`` is known. By default each score is the
    derivative of the Bernoulli log-likelihood,
    ``(y - mu) dmu/dtheta / (mu (1 - mu))``. With ``ml_score=False`` the
    unweighted quasi-score ``(y - mu) dmu/dtheta`` of :func:`probit_score`
    is used instead.
    """

    p: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha: float = 0.0
    ml_score: bool = True

    def __post_init__(self):
        x = np.asarray(self.x, float).ravel()
        if not np.all(np.isfinite(x)):
            raise ValueError("covariate contains non-finite values")
        object.__setattr__(self, "x", x)

    @property
    def observation_dim(self) -> int:
        return self.p

    def _eta(self, theta, x):
        return self.alpha + np.outer(x, np.asarray(theta, float))

    def _parts(self, theta, y, x):
        eta = self._eta(theta, x)
        mu, mu_c = norm_cdf(eta), norm_cdf(-eta)
        # y - mu without cancellation in either tail
        r = y * mu_c - (1.0 - y) * mu
        return eta, mu, mu_c, r

    def _scores(self, theta, y, x):
        eta, mu, mu_c, r = self._parts(theta, y, x)
        u = r * norm_pdf(eta) * x[:, None]
        if self.ml_score:
            u = u / np.clip(mu * mu_c, 1e-300, None)
        return u

    def _derivs(self, theta, y, x):
        eta, mu, mu_c, r = self._parts(theta, y, x)
        phi = norm_pdf(eta)
        x2 = (x * x)[:, None]
        if not self.ml_score:
            # d/dtheta [(y - mu) phi x] with phi' = -eta phi
            return x2 * phi * (-phi - r * eta)
        v = np.clip(mu * mu_c, 1e-300, None)
        dv = phi * (mu_c - mu)
        a = r * phi / v
        return x2 * (-phi * phi / v - a * eta - a * (dv / v))

    def score_matrix(self, theta, data):
        y = np.asarray(data, float)
        if y.shape[0] != self.x.shape[0]:
            raise ValueError("covariate length does not match the number of observations")
        return self._scores(theta, y, self.x)

    def derivative_matrix(self, theta, data):
        y = np.asarray(data, float)
        if y.shape[0] != self.x.shape[0]:
            raise ValueError("covariate length does not match the number of observations")
        return self._derivs(theta, y, self.x)

    def expected_derivative_matrix(self, theta, data):
        """Negative expected information per observation (always <= 0)."""
        eta = self._eta(theta, self.x)
        v = norm_cdf(eta) * norm_cdf(-eta)
        info = (norm_pdf(eta) * self.x[:, None]) ** 2
        if self.ml_score:
            info = info / np.clip(v, 1e-300, None)
        else:
            info = info * v
        return -info

    def _single(self, theta, y, i):
        if i is None:
            raise ValueError("probit scores need the observation index i")
        return self._scores(theta, np.atleast_2d(np.asarray(y, float)), self.x[i : i + 1])[0]

    def _single_derivative(self, theta, y, i):
        if i is None:
            raise ValueError("probit scores need the observation index i")
        return self._derivs(theta, y, self.x[i : i + 1])[0]

    def validate(self, data):
        data = super().validate(data)
        if not np.all((data == 0.0) | (data == 1.0)):
            raise ValueError("probit responses must be 0/1")
        if data.shape[0] != self.x.shape[0]:
            raise ValueError("covariate length does not match the number of observations")
        return data


@dataclass(frozen=True)
class PairwiseCorrelationModel(ScoreModel):
    """Pairwise correlation scores for ``Y ~ N_d(0, R)`` with unit variances.

    Component ``j`` corresponds to the pair ``pairs[j] = (j1, j2)`` with
    ``j1 < j2`` (0-based), enumerated row by row over the upper triangle.
    """

    d: int
    domain: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("need at least two variables")

    @property
    def p(self) -> int:
        return self.d * (self.d - 1) // 2

    @property
    def observation_dim(self) -> int:
        return self.d

    @property
    def pairs(self) -> np.ndarray:
        return pair_list(self.d)

    def pair_of(self, j: int) -> Tuple[int, int]:
        if not 0 <= j < self.p:
            raise IndexError(j)
        j1, j2 = self.pairs[j]
        return int(j1), int(j2)

    def index_of(self, j1: int, j2: int) -> int:
        if j1 > j2:
            j1, j2 = j2, j1
        if not (0 <= j1 < j2 < self.d):
            raise IndexError((j1, j2))
        return j1 * self.d - j1 * (j1 + 1) // 2 + (j2 - j1 - 1)

    def _parts(self, data):
        y = np.asarray(data, float)
        pr = self.pairs
        y1, y2 = y[:, pr[:, 0]], y[:, pr[:, 1]]
        return y1 * y2, y1 * y1 + y2 * y2

    def score_matrix(self, theta, data):
        t = np.asarray(theta, float)
        if np.any(np.abs(t) >= 1.0):
            raise ValueError("correlation parameter must lie in (-1, 1)")
        prod, ssq = self._parts(data)
        return (1.0 + t * t) * prod - t * ssq + t * (1.0 - t * t)

    def derivative_matrix(self, theta, data):
        t = np.asarray(theta, float)
        prod, ssq = self._parts(data)
        return 2.0 * t * prod - ssq + 1.0 - 3.0 * t * t

    def initial_estimate(self, data):
        """Pearson correlation of each pair, clipped into the open domain."""
        y = np.asarray(data, float)
        r = np.corrcoef(y, rowvar=False)
        pr = self.pairs
        start = r[pr[:, 0], pr[:, 1]]
        start = np.where(np.isfinite(start), start, 0.0)
        return np.clip(start, -1.0 + CORR_EPS, 1.0 - CORR_EPS)
