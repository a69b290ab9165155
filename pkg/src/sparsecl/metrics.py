"""Support recovery and estimation accuracy metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .estimation import SolverOptions, solve_all
from .score_models import GaussianLocationModel, PairwiseCorrelationModel, ProbitRegressionModel

__all__ = [
    "SelectionMetrics",
    "EfficiencyReport",
    "selection_metrics",
    "rmse",
    "oracle_mle",
    "efficiency_curve",
    "efficiency_report",
]


@dataclass(frozen=True)
class SelectionMetrics:
    """TPP, TNP and FDP as fractions.

    ``tpp`` is ``None`` when the truth has no nonzero component and ``tnp``
    is ``None`` when it has no zero component. FDP is 0 when nothing is
    selected.
    """

    tpp: Optional[float]
    tnp: Optional[float]
    fdp: float
    p_hat_star: int
    true_selected: int
    false_selected: int


@dataclass(frozen=True)
class EfficiencyReport:
    rmse_estimator: float
    rmse_oracle: float
    relative_efficiency: float
    avg_selected: float


def selection_metrics(theta_hat, theta_true) -> SelectionMetrics:
    est = np.asarray(theta_hat) != 0
    tru = np.asarray(theta_true) != 0
    if est.shape != tru.shape:
        raise ValueError("theta_hat and theta_true differ in length")
    p, p_star = tru.size, int(tru.sum())
    tp = int(np.sum(est & tru))
    fp = int(np.sum(est & ~tru))
    tn = int(np.sum(~est & ~tru))
    p_hat = tp + fp
    return SelectionMetrics(
        tpp=tp / p_star if p_star else None,
        tnp=tn / (p - p_star) if p > p_star else None,
        fdp=fp / p_hat if p_hat else 0.0,
        p_hat_star=p_hat,
        true_selected=tp,
        false_selected=fp,
    )


def rmse(estimates, theta_true) -> float:
    """``sqrt(mean_r ||est_r - theta||^2 / p)`` over replicate rows ``est_r``."""
    est = np.atleast_2d(np.asarray(estimates, float))
    t = np.asarray(theta_true, float)
    return math.sqrt(float(np.mean((est - t) ** 2)))


def oracle_mle(model, data, theta_true, options: SolverOptions = SolverOptions()) -> np.ndarray:
    """Maximum likelihood on the true support, zeros elsewhere.

    * normal location: sample means on the support;
    * probit: per-component probit maximum likelihood (known intercept);
    * correlation: pairwise estimates on the support (a stand-in for the
      full-likelihood fit, which is not computed).
    """
    theta_true = np.asarray(theta_true, float)
    support = np.flatnonzero(theta_true)
    out = np.zeros_like(theta_true)
    if support.size == 0:
        return out
    data = np.asarray(data, float)
    if isinstance(model, GaussianLocationModel):
        out[support] = data[:, support].mean(axis=0)
    elif isinstance(model, ProbitRegressionModel):
        ml = ProbitRegressionModel(support.size, model.x, model.alpha, ml_score=True)
        est = solve_all(ml, data[:, support], options)
        out[support] = est.theta_tilde
    elif isinstance(model, PairwiseCorrelationModel):
        est = solve_all(model, data, options)
        out[support] = est.theta_tilde[support]
    else:
        raise TypeError(f"no oracle estimator for {type(model).__name__}")
    return out


def efficiency_curve(replicates: Iterable[Sequence]) -> List[Tuple[float, float]]:
    """Relative efficiency ``rmse(oracle) / rmse(estimator)`` per penalty level.

    ``replicates`` yields, per penalty level, a sequence of
    ``(theta_hat, oracle_hat, theta_true, p_hat_star)`` tuples across
    Monte Carlo replicates. Returns ``(mean p_hat_star, efficiency)`` pairs.
    """
    out = []
    for level in replicates:
        level = list(level)
        if len(level) < 2:
            raise ValueError("need at least two replicates per penalty level")
        est = np.array([r[0] for r in level], float)
        orc = np.array([r[1] for r in level], float)
        tru = np.array([r[2] for r in level], float)
        ph = float(np.mean([r[3] for r in level]))
        r_est = math.sqrt(float(np.mean((est - tru) ** 2)))
        r_orc = math.sqrt(float(np.mean((orc - tru) ** 2)))
        eff = r_orc / r_est if r_est > 0 else (1.0 if r_orc == 0 else math.inf)
        out.append((ph, eff))
    return out


def efficiency_report(theta_hats, oracle_hats, theta_true, p_hats) -> EfficiencyReport:
    t = np.asarray(theta_true, float)
    r_est, r_orc = rmse(theta_hats, t), rmse(oracle_hats, t)
    eff = r_orc / r_est if r_est > 0 else (1.0 if r_orc == 0 else math.inf)
    return EfficiencyReport(r_est, r_orc, eff, float(np.mean(p_hats)))
