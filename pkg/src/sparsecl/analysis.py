"""End-to-end fits and the subsample accuracy study for correlation data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .covariance import ScoreCovariance, build_score_matrix, empirical_covariance
from .estimation import PrelimEstimate, solve_all
from .inference import SandwichVariance, sandwich
from .io import DataError, Dataset, standardize
from .score_models import PairwiseCorrelationModel, ScoreModel
from .selector import (
    MAX_SWEEPS,
    TOL_CD,
    CompositionRule,
    PenaltyWeights,
    coordinate_descent,
    lambda_for_target,
    lambda_path,
    z_statistics,
)

__all__ = [
    "FitResult",
    "fit",
    "fit_path",
    "soft_threshold_correlation",
    "subsample_rmse",
    "SubsampleRow",
]


@dataclass
class FitResult:
    prelim: PrelimEstimate
    cov: ScoreCovariance
    rule: CompositionRule
    theta_hat: np.ndarray
    z2: np.ndarray
    variance: Optional[SandwichVariance]

    @property
    def lam(self) -> float:
        return self.rule.lam

    def standard_errors(self) -> np.ndarray:
        """Full-length vector with ``nan`` outside the active set."""
        se = np.full(self.theta_hat.size, np.nan)
        if self.variance is not None:
            se[self.variance.active] = self.variance.se
        return se


def _prepare(model: ScoreModel, data):
    prelim = solve_all(model, data)
    scores = build_score_matrix(model, data, prelim)
    return prelim, scores, empirical_covariance(scores)


def fit(model: ScoreModel, data, lam: Optional[float] = None, target: Optional[int] = None,
        with_se: bool = True, tol: float = TOL_CD, max_sweeps: int = MAX_SWEEPS) -> FitResult:
    """Preliminary roots, score covariance and the penalised rule.

    Give either ``lam`` or ``target``, the largest admissible number of
    selected components (found by bisection on ``log(lam)``).
    """
    if (lam is None) == (target is None):
        raise ValueError("give exactly one of lam and target")
    data = model.validate(data)
    prelim, scores, cov = _prepare(model, data)
    if target is not None:
        rule = lambda_for_target(cov, prelim, int(target), tol=tol).rule
    else:
        rule = coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), float(lam), tol=tol,
                                  max_sweeps=max_sweeps)
    theta_hat = np.where(rule.w_hat != 0, prelim.theta_tilde, 0.0)
    variance = None
    if with_se and rule.active_set.size:
        variance = sandwich(model, data, prelim, rule.active_set)
    return FitResult(prelim, cov, rule, theta_hat, z_statistics(scores, prelim, rule), variance)


def fit_path(model: ScoreModel, data, grid: Sequence[float], tol: float = TOL_CD,
             max_sweeps: int = MAX_SWEEPS):
    data = model.validate(data)
    prelim, _, cov = _prepare(model, data)
    return prelim, lambda_path(cov, prelim, grid, tol=tol, max_sweeps=max_sweeps)


def soft_threshold_correlation(R, target: int) -> np.ndarray:
    """Soft-threshold the off-diagonal entries ``R[j1, j2], j1 < j2`` so that
    at most ``target`` of them stay nonzero. Returns the pair-ordered vector."""
    R = np.asarray(R, float)
    iu = np.triu_indices(R.shape[0], k=1)
    r = R[iu]
    if target >= r.size:
        return r.copy()
    mags = np.sort(np.abs(r))[::-1]
    t = mags[target] if target >= 0 else mags[0]
    return np.sign(r) * np.maximum(np.abs(r) - t, 0.0)


@dataclass(frozen=True)
class SubsampleRow:
    target: int
    rmse: float
    rmse_se: float
    rmse_soft: float
    mean_selected: float


def subsample_rmse(ds: Dataset, k_folds: int, targets: Sequence[int], seed: int
                   ) -> List[SubsampleRow]:
    """Accuracy of sparse pairwise fits on random disjoint subsets.

    The data are standardised once, then split at random into ``k_folds``
    nearly equal subsets. On each subset the penalty is tuned to each
    target sparsity; the estimate is compared with the empirical
    correlation matrix of the full data through
    ``sqrt(mean_j (theta_hat_j - r_j)^2)`` over all pairs. A soft-threshold
    estimate of the subset correlation matrix with the same sparsity is
    reported alongside.
    """
    if k_folds < 2:
        raise ValueError("need at least two folds")
    if not ds.standardized:
        ds = standardize(ds)
    x = ds.values
    n, d = x.shape
    if n // k_folds < 10:
        raise DataError(f"subsets of about {n // k_folds} rows are too small (need >= 10)")
    iu = np.triu_indices(d, k=1)
    ref = np.corrcoef(x, rowvar=False)[iu]
    model = PairwiseCorrelationModel(d)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), k_folds)
    err: Dict[int, List[float]] = {t: [] for t in targets}
    soft: Dict[int, List[float]] = {t: [] for t in targets}
    sel: Dict[int, List[int]] = {t: [] for t in targets}
    for idx in folds:
        sub = x[np.sort(idx)]
        prelim, _, cov = _prepare(model, sub)
        r_sub = np.corrcoef(sub, rowvar=False)
        for t in targets:
            entry = lambda_for_target(cov, prelim, int(t))
            err[t].append(math.sqrt(float(np.mean((entry.theta_hat - ref) ** 2))))
            sel[t].append(entry.p_hat)
            st = soft_threshold_correlation(r_sub, int(t))
            soft[t].append(math.sqrt(float(np.mean((st - ref) ** 2))))
    out = []
    for t in targets:
        e = np.asarray(err[t])
        out.append(SubsampleRow(int(t), float(e.mean()), float(e.std(ddof=1) / math.sqrt(e.size)),
                                float(np.mean(soft[t])), float(np.mean(sel[t]))))
    return out
