"""Score matrix and empirical score covariance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .estimation import PrelimEstimate
from .score_models import ScoreModel

__all__ = [
    "ScoreMatrix",
    "ScoreCovariance",
    "build_score_matrix",
    "empirical_covariance",
    "gershgorin_eigen_bounds",
    "NearSingularCovarianceWarning",
]

DEFAULT_MAX_P = 5000


class NearSingularCovarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    """``n x p`` array with entries ``u_j(theta_tilde_j; Y^(i))``."""

    u: np.ndarray

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def p(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class ScoreCovariance:
    """Uncentred second moment ``C_hat = U^T U / n`` and its diagonal."""

    C_hat: np.ndarray
    n: int

    @property
    def h_hat(self) -> np.ndarray:
        return np.diag(self.C_hat).copy()

    @property
    def p(self) -> int:
        return self.C_hat.shape[0]

    def restrict(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self.C_hat[np.ix_(idx, idx)]


def build_score_matrix(model: ScoreModel, data, prelim: PrelimEstimate) -> ScoreMatrix:
    if prelim.p != model.p:
        raise ValueError(f"preliminary estimate has {prelim.p} entries, model has p={model.p}")
    data = model.validate(data)
    u = np.asarray(model.score_matrix(prelim.theta_tilde, data), dtype=float)
    bad = np.argwhere(~np.isfinite(u))
    if bad.size:
        i, j = bad[0]
        raise FloatingPointError(f"non-finite score at observation {i}, component {j}")
    return ScoreMatrix(u)


def empirical_covariance(scores: ScoreMatrix, max_p: int = DEFAULT_MAX_P) -> ScoreCovariance:
    """``C_hat = n^{-1} sum_i u_i u_i^T`` without mean-centring.

    At the marginal roots every score column already averages to zero, so
    centring would only remove rounding noise.
    """
    u = scores.u
    n, p = u.shape
    if n < 2:
        raise ValueError("need at least two observations")
    if p > max_p:
        raise ValueError(f"p={p} exceeds the configured cap {max_p}")
    C = u.T @ u / n
    C = 0.5 * (C + C.T)
    return ScoreCovariance(C, n)


def gershgorin_eigen_bounds(cov, exact: bool = False, warn: bool = True):
    """Gershgorin bounds ``(lower, upper)`` on the eigenvalues of ``C``.

    With ``exact=True`` (only for ``p <= 500``) the extreme eigenvalues are
    returned instead. A non-positive lower bound triggers a
    :class:`NearSingularCovarianceWarning`.
    """
    C = cov.C_hat if isinstance(cov, ScoreCovariance) else np.asarray(cov, float)
    if exact:
        if C.shape[0] > 500:
            raise ValueError("exact eigenvalues only computed for p <= 500")
        ev = np.linalg.eigvalsh(C)
        lower, upper = float(ev[0]), float(ev[-1])
    else:
        d = np.diag(C)
        radius = np.abs(C).sum(axis=1) - np.abs(d)
        lower, upper = float(np.min(d - radius)), float(np.max(d + radius))
    if warn and lower <= 1e-10 * max(abs(upper), 1.0):
        warnings.warn(
            f"score covariance may be singular (eigenvalue lower bound {lower:.3g})",
            NearSingularCovarianceWarning,
            stacklevel=2,
        )
    return lower, upper
