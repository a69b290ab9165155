"""Preliminary marginal estimators.

Each ``theta_tilde_j`` solves its own estimating equation
``0 = sum_i u_j(theta_j; Y^(i))``. The ``p`` one-dimensional solves are
independent, so they are carried out simultaneously on vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .score_models import (
    CORR_EPS,
    GaussianLocationModel,
    PairwiseCorrelationModel,
    ProbitRegressionModel,
    ScoreModel,
)

__all__ = [
    "SolverOptions",
    "PrelimEstimate",
    "MarginalDiagnostics",
    "solve_all",
    "solve_marginal",
]

OK = "ok"
NO_ROOT = "no_root_in_domain"
MAX_ITER = "max_iterations_exceeded"
SEPARATION = "perfect_separation"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8  # on the mean score
    max_iter: int = 100
    max_halvings: int = 40
    # |alpha + theta x| beyond this is treated as a root at infinity
    max_linear_predictor: float = 30.0


@dataclass(frozen=True)
class MarginalDiagnostics:
    converged: bool
    iterations: int
    status: str = OK


@dataclass
class PrelimEstimate:
    """Vector of marginal roots with per-component solver diagnostics."""

    theta_tilde: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    status: List[str] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.theta_tilde.shape[0]

    def diagnostics(self, j: int) -> MarginalDiagnostics:
        return MarginalDiagnostics(bool(self.converged[j]), int(self.iterations[j]), self.status[j])

    def take(self, idx) -> "PrelimEstimate":
        idx = np.asarray(idx)
        return PrelimEstimate(
            self.theta_tilde[idx].copy(),
            self.converged[idx].copy(),
            self.iterations[idx].copy(),
            [self.status[k] for k in idx],
        )


def _mean_scores(model, theta, data):
    return model.score_matrix(theta, data).mean(axis=0)


def _bracketed_newton(model, data, opts):
    """Newton iterations kept inside a shrinking sign-change bracket.

    Assumes the mean score is positive at the lower end of the domain and
    negative at the upper end, which holds for the pairwise correlation
    score: its mean equals ``2a + b >= 0`` at -1 and ``2a - b <= 0`` at 1.
    """
    lo_dom, hi_dom = model.domain
    lo = np.full(model.p, lo_dom + CORR_EPS)
    hi = np.full(model.p, hi_dom - CORR_EPS)
    f_lo = _mean_scores(model, lo, data)
    f_hi = _mean_scores(model, hi, data)
    theta = np.clip(model.initial_estimate(data), lo, hi)
    iters = np.zeros(model.p, dtype=int)
    done = np.zeros(model.p, dtype=bool)
    status = np.array([OK] * model.p, dtype=object)

    # no sign change inside the clamped domain: root sits at an endpoint
    no_root = (f_lo < -opts.tol) | (f_hi > opts.tol)
    theta[no_root] = np.where(np.abs(f_lo[no_root]) < np.abs(f_hi[no_root]),
                              lo[no_root], hi[no_root])
    status[no_root] = NO_ROOT
    done |= no_root
    # endpoints that are themselves roots
    at_lo = ~done & (np.abs(f_lo) <= opts.tol)
    at_hi = ~done & (np.abs(f_hi) <= opts.tol)
    theta[at_lo], theta[at_hi] = lo[at_lo], hi[at_hi]
    done |= at_lo | at_hi

    for _ in range(opts.max_iter):
        f = _mean_scores(model, theta, data)
        conv = np.abs(f) <= opts.tol
        done |= conv
        if done.all():
            break
        act = ~done
        iters[act] += 1
        lo = np.where(act & (f > 0), theta, lo)
        hi = np.where(act & (f < 0), theta, hi)
        g = model.derivative_matrix(theta, data).mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = theta - f / g
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        step = np.where(bad, 0.5 * (lo + hi), step)
        theta = np.where(act, step, theta)
        # bracket collapsed to machine precision: accept the midpoint
        tiny = act & (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(theta)))
        done |= tiny
    else:
        f = _mean_scores(model, theta, data)
        done |= np.abs(f) <= opts.tol

    converged = done & (status == OK)
    status[~done] = MAX_ITER
    return theta, converged, iters, list(status)


def _probit_newton(model: ProbitRegressionModel, data, opts):
    """Damped Newton with step halving on the absolute mean score.

    The observed slope is used when negative, otherwise the expected
    (Fisher scoring) slope.
    """
    p = model.p
    x = model.x
    status = np.array([OK] * p, dtype=object)
    iters = np.zeros(p, dtype=int)
    theta = np.zeros(p)
    done = np.zeros(p, dtype=bool)
    xmax = float(np.max(np.abs(x))) if x.size else 0.0
    if xmax == 0.0:
        # score is identically zero in theta; nothing identifies it
        status[:] = SEPARATION
        return theta, np.zeros(p, dtype=bool), iters, list(status)
    bound = (opts.max_linear_predictor + abs(model.alpha)) / xmax

    # The likelihood increases without bound as theta -> +inf exactly when
    # every y with x > 0 is 1 and every y with x < 0 is 0 (and mirrored
    # for -inf); the mean score then only decays towards zero.
    pos, neg = x > 0, x < 0
    up = np.all(data[pos] == 1.0, axis=0) & np.all(data[neg] == 0.0, axis=0)
    down = np.all(data[pos] == 0.0, axis=0) & np.all(data[neg] == 1.0, axis=0)
    separated = up | down
    theta[up & ~down] = bound
    theta[down & ~up] = -bound
    status[separated] = SEPARATION
    done |= separated

    f = _mean_scores(model, theta, data)
    for _ in range(opts.max_iter):
        done |= np.abs(f) <= opts.tol
        if done.all():
            break
        act = ~done
        iters[act] += 1
        g = model.derivative_matrix(theta, data).mean(axis=0)
        gexp = model.expected_derivative_matrix(theta, data).mean(axis=0)
        slope = np.where(g < 0, g, gexp)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(act & (slope < 0), -f / slope, 0.0)
        step = np.where(np.isfinite(step), step, 0.0)
        absf = np.abs(f)
        t = np.ones(p)
        cand = theta + step
        fc = _mean_scores(model, cand, data)
        for _h in range(opts.max_halvings):
            worse = act & (np.abs(fc) >= absf) & (step != 0)
            if not worse.any():
                break
            t = np.where(worse, 0.5 * t, t)
            cand = theta + t * step
            fc = np.where(worse, _mean_scores(model, cand, data), fc)
        moved = act & (np.abs(fc) < absf)
        theta = np.where(moved, cand, theta)
        f = np.where(moved, fc, f)
        stuck = act & ~moved
        # root escaping to infinity (separated data) or no descent possible
        runaway = act & (np.abs(theta) > bound)
        status[runaway | stuck] = SEPARATION
        done |= runaway | stuck
    done |= np.abs(f) <= opts.tol
    status[~done] = MAX_ITER
    converged = done & (status == OK)
    return theta, converged, iters, list(status)


def _generic_newton(model: ScoreModel, data, opts):
    lo, hi = model.domain
    if np.isfinite(lo) and np.isfinite(hi):
        return _bracketed_newton(model, data, opts)
    theta = np.asarray(model.initial_estimate(data), float).copy()
    iters = np.zeros(model.p, dtype=int)
    done = np.zeros(model.p, dtype=bool)
    f = _mean_scores(model, theta, data)
    for _ in range(opts.max_iter):
        done |= np.abs(f) <= opts.tol
        if done.all():
            break
        act = ~done
        iters[act] += 1
        g = model.derivative_matrix(theta, data).mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(act, -f / g, 0.0)
        step = np.where(np.isfinite(step), step, 0.0)
        t = np.ones(model.p)
        cand = theta + step
        fc = _mean_scores(model, cand, data)
        for _h in range(opts.max_halvings):
            worse = act & ~(np.abs(fc) < np.abs(f))
            if not worse.any():
                break
            t = np.where(worse, 0.5 * t, t)
            cand = theta + t * step
            fc = np.where(worse, _mean_scores(model, cand, data), fc)
        theta, f = np.where(act, cand, theta), np.where(act, fc, f)
    done |= np.abs(f) <= opts.tol
    status = [OK if c else MAX_ITER for c in done]
    return theta, done.copy(), iters, status


def solve_all(model: ScoreModel, data, options: SolverOptions = SolverOptions()) -> PrelimEstimate:
    """Solve all ``p`` marginal estimating equations.

    Failures are reported per component through ``converged`` and
    ``status``; the batch never aborts on one bad component.
    """
    data = model.validate(data)
    if data.shape[0] < 2:
        raise ValueError("need at least two observations")
    if isinstance(model, GaussianLocationModel):
        theta = data.mean(axis=0)
        p = model.p
        return PrelimEstimate(theta, np.ones(p, bool), np.zeros(p, int), [OK] * p)
    if isinstance(model, PairwiseCorrelationModel):
        res = _bracketed_newton(model, data, options)
    elif isinstance(model, ProbitRegressionModel):
        res = _probit_newton(model, data, options)
    else:
        res = _generic_newton(model, data, options)
    theta, conv, iters, status = res
    return PrelimEstimate(np.asarray(theta, float), np.asarray(conv, bool),
                          np.asarray(iters, int), list(status))


class _Restricted(ScoreModel):
    """View of one component ``j`` of a model as a 1-parameter model."""

    def __init__(self, model, j):
        self.model, self.j = model, j
        self.p = 1
        self.observation_dim = model.observation_dim
        self.domain = model.domain

    def _full(self, theta, data):
        base = np.zeros(self.model.p)
        base[self.j] = theta[0]
        return base

    def score_matrix(self, theta, data):
        return self.model.score_matrix(self._full(theta, data), data)[:, [self.j]]

    def derivative_matrix(self, theta, data):
        return self.model.derivative_matrix(self._full(theta, data), data)[:, [self.j]]

    def initial_estimate(self, data):
        return np.asarray(self.model.initial_estimate(data))[[self.j]]


def solve_marginal(model: ScoreModel, data, j: int, options: SolverOptions = SolverOptions()):
    """Solve the ``j``-th marginal equation alone.

    Returns ``(theta_tilde_j, MarginalDiagnostics)``.
    """
    data = model.validate(data)
    if not 0 <= j < model.p:
        raise IndexError(j)
    if data.shape[0] < 2:
        raise ValueError("need at least two observations")
    if isinstance(model, GaussianLocationModel):
        return float(data[:, j].mean()), MarginalDiagnostics(True, 0)
    if isinstance(model, ProbitRegressionModel):
        sub = ProbitRegressionModel(1, model.x, model.alpha, model.ml_score)
        theta, conv, iters, status = _probit_newton(sub, data[:, [j]], options)
    else:
        theta, conv, iters, status = _generic_newton(_Restricted(model, j), data, options)
    return float(theta[0]), MarginalDiagnostics(bool(conv[0]), int(iters[0]), status[0])
