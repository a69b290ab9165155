"""Sandwich variance on the selected set, Wald ranking and penalty guidance.

Standard errors are computed after selection as if the selected set were
fixed in advance. No selective-inference correction is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.stats import chi2

from .covariance import build_score_matrix
from .estimation import PrelimEstimate
from .score_models import ScoreModel

__all__ = ["SandwichVariance", "SingularHError", "sandwich", "wald_rank", "chi2_lambda_guidance"]


class SingularHError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SandwichVariance:
    """``G = H^{-1} C H^{-1}`` restricted to ``active``.

    ``H`` is diagonal because each score depends on its own parameter only.
    Standard errors are ``sqrt(diag(G) / n)``.
    """

    active: np.ndarray
    H_A: np.ndarray
    C_A: np.ndarray
    G_A: np.ndarray
    se: np.ndarray
    n: int


def sandwich(model: ScoreModel, data, prelim: PrelimEstimate, active, h_tol: float = 1e-12
             ) -> SandwichVariance:
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise ValueError("active set is empty")
    data = model.validate(data)
    n = data.shape[0]
    u = build_score_matrix(model, data, prelim).u[:, active]
    dh = np.asarray(model.derivative_matrix(prelim.theta_tilde, data), float)[:, active]
    hdiag = dh.mean(axis=0)
    if np.any(~np.isfinite(hdiag)) or np.any(np.abs(hdiag) <= h_tol):
        bad = active[~np.isfinite(hdiag) | (np.abs(hdiag) <= h_tol)]
        raise SingularHError(f"score derivative averages vanish for components {bad.tolist()}")
    C_A = u.T @ u / n
    C_A = 0.5 * (C_A + C_A.T)
    hinv = 1.0 / hdiag
    G = hinv[:, None] * C_A * hinv[None, :]
    se = np.sqrt(np.diag(G) / n)
    return SandwichVariance(active, np.diag(hdiag), C_A, G, se, n)


def wald_rank(model: ScoreModel, data, prelim: PrelimEstimate) -> List[Tuple[int, float]]:
    """Components ordered by the marginal Wald statistic ``theta_j^2 / se_j^2``.

    Sorted in decreasing order; ties keep the lower index first.
    Components whose sandwich variance is undefined get statistic 0.
    """
    data = model.validate(data)
    n = data.shape[0]
    u = build_score_matrix(model, data, prelim).u
    hdiag = np.asarray(model.derivative_matrix(prelim.theta_tilde, data), float).mean(axis=0)
    cdiag = np.einsum("ij,ij->j", u, u) / n
    theta = np.asarray(prelim.theta_tilde, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = cdiag / (hdiag * hdiag)
        stat = n * theta * theta / g
    stat = np.where(np.isfinite(stat), stat, 0.0)
    stat = np.where(theta == 0.0, 0.0, stat)
    order = sorted(range(stat.size), key=lambda j: (-stat[j], j))
    return [(j, float(stat[j])) for j in order]


def chi2_lambda_guidance(alpha: float) -> float:
    """Upper-``alpha`` quantile of chi-square(1), a per-test threshold for ``lam``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(chi2.isf(alpha, df=1))
