"""Sparse composition rules.

The composition rule ``w`` minimises the penalised efficiency criterion

    d(w) = 1/2 w' C w - w' diag(C) + (lam / n) * sum_j |w_j| / theta_j^2

over ``w`` in R^p, where ``C`` is the empirical score covariance and
``theta`` the vector of preliminary estimates. Components with ``w_j = 0``
drop their sub-likelihood and set the estimate of ``theta_j`` to zero.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .covariance import ScoreCovariance, ScoreMatrix, empirical_covariance
from .estimation import PrelimEstimate

__all__ = [
    "PenaltyWeights",
    "CompositionRule",
    "PathEntry",
    "SelectionPath",
    "SingularActiveBlockError",
    "objective",
    "objective_gradient",
    "soft_threshold",
    "coordinate_descent",
    "kkt_check",
    "closed_form_active",
    "closed_form_identity",
    "exhaustive_minimizer",
    "z_statistics",
    "lambda_path",
    "lambda_max",
    "lambda_for_target",
    "population_rule",
]

TOL_CD = 1e-9
MAX_SWEEPS = 10_000
TOL_KKT = 1e-7


class SingularActiveBlockError(np.linalg.LinAlgError):
    pass


class MaxSweepsWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PenaltyWeights:
    """Adaptive penalty weights ``1 / theta_tilde_j^2`` (``inf`` at zero)."""

    inv_theta_sq: np.ndarray

    @classmethod
    def from_theta(cls, theta) -> "PenaltyWeights":
        t = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore"):
            w = 1.0 / (t * t)
        w = np.where(np.isfinite(t) & (t != 0.0), w, np.inf)
        return cls(w)

    @classmethod
    def from_prelim(cls, prelim: PrelimEstimate) -> "PenaltyWeights":
        return cls.from_theta(prelim.theta_tilde)

    def thresholds(self, lam: float, n: int) -> np.ndarray:
        """Per-coordinate soft-threshold levels ``lam / (n theta_j^2)``."""
        pw = self.inv_theta_sq
        with np.errstate(invalid="ignore"):
            t = lam * pw / n
        return np.where(np.isinf(pw), np.inf, t)


@dataclass
class CompositionRule:
    w_hat: np.ndarray
    lam: float
    objective_value: float
    kkt_residual: float
    converged: bool = True
    sweeps: int = 0
    objective_trace: Optional[List[float]] = None

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.w_hat)

    @property
    def p_hat(self) -> int:
        return int(np.count_nonzero(self.w_hat))


@dataclass
class PathEntry:
    lam: float
    rule: CompositionRule
    theta_hat: np.ndarray

    @property
    def p_hat(self) -> int:
        return self.rule.p_hat


@dataclass
class SelectionPath:
    entries: List[PathEntry] = field(default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    @property
    def p_hats(self) -> np.ndarray:
        return np.array([e.p_hat for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k) -> PathEntry:
        return self.entries[k]

    def __iter__(self):
        return iter(self.entries)


def _as_cov(obj) -> ScoreCovariance:
    if isinstance(obj, ScoreCovariance):
        return obj
    if isinstance(obj, ScoreMatrix):
        return empirical_covariance(obj)
    raise TypeError("expected a ScoreCovariance or ScoreMatrix")


def soft_threshold(x, threshold):
    """``sign(x) * max(|x| - threshold, 0)``."""
    if np.any(np.asarray(threshold) < 0):
        raise ValueError("threshold must be non-negative")
    out = np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)
    return out if np.ndim(out) else float(out)


def objective(w, cov, weights: PenaltyWeights, lam: float, n: Optional[int] = None) -> float:
    """Penalised criterion ``d_lam(w)``; ``inf`` if a forced-zero weight is nonzero."""
    C = cov.C_hat if isinstance(cov, ScoreCovariance) else np.asarray(cov, float)
    if n is None:
        n = cov.n
    w = np.asarray(w, dtype=float)
    nz = w != 0
    pw = weights.inv_theta_sq[nz]
    if np.isinf(pw).any():
        return np.inf
    pen = lam / n * float(np.sum(np.abs(w[nz]) * pw))
    return float(0.5 * w @ C @ w - w @ np.diag(C) + pen)


def objective_gradient(w, cov) -> np.ndarray:
    """Gradient of the smooth part, ``C w - diag(C)``."""
    C = cov.C_hat if isinstance(cov, ScoreCovariance) else np.asarray(cov, float)
    return C @ np.asarray(w, float) - np.diag(C)


def coordinate_descent(
    cov,
    weights: PenaltyWeights,
    lam: float,
    w0=None,
    tol: float = TOL_CD,
    max_sweeps: int = MAX_SWEEPS,
    record_objective: bool = False,
) -> CompositionRule:
    """Cyclic coordinate descent for the penalised criterion.

    Each update is the exact minimiser along one coordinate,

        w_j <- S(C_jj - sum_{k != j} C_jk w_k ; lam / (n theta_j^2)) / C_jj,

    with ``C w`` kept up to date incrementally so one update costs O(p).
    After every full sweep the active coordinates are cycled to convergence
    before the next full sweep. Stops when a full sweep changes no
    coordinate by more than ``tol``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    cov = _as_cov(cov)
    C = np.ascontiguousarray(cov.C_hat)
    p = C.shape[0]
    h = np.diag(C).copy()
    thr = weights.thresholds(lam, cov.n)
    skip = ~np.isfinite(thr) | (h <= 0)
    if np.any(h <= 0):
        warnings.warn("zero score columns are fixed at w_j = 0", RuntimeWarning, stacklevel=2)

    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    w[skip] = 0.0
    r = C @ w
    hl, tl, sl = h.tolist(), thr.tolist(), skip.tolist()
    trace = [objective(w, cov, weights, lam)] if record_objective else None

    def sweep(idx):
        biggest = 0.0
        for j in idx:
            if sl[j]:
                continue
            wj = w[j]
            hj = hl[j]
            z = hj - r[j] + hj * wj
            t = tl[j]
            if z > t:
                new = (z - t) / hj
            elif z < -t:
                new = (z + t) / hj
            else:
                new = 0.0
            d = new - wj
            if d != 0.0:
                r[:] += d * C[j]
                w[j] = new
                ad = abs(d)
                if ad > biggest:
                    biggest = ad
        return biggest

    all_idx = range(p)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        change = sweep(all_idx)
        sweeps += 1
        if record_objective:
            trace.append(objective(w, cov, weights, lam))
        if change <= tol:
            converged = True
            break
        act = np.flatnonzero(w).tolist()
        while sweeps < max_sweeps:
            change = sweep(act)
            sweeps += 1
            if record_objective:
                trace.append(objective(w, cov, weights, lam))
            if change <= tol:
                break
    if not converged:
        warnings.warn(f"coordinate descent stopped after {sweeps} sweeps", MaxSweepsWarning,
                      stacklevel=2)
    res, _ = kkt_check(w, cov, weights, lam)
    return CompositionRule(
        w_hat=w,
        lam=float(lam),
        objective_value=objective(w, cov, weights, lam),
        kkt_residual=res,
        converged=converged,
        sweeps=sweeps,
        objective_trace=trace,
    )


def kkt_check(w, cov, weights: PenaltyWeights, lam: float, tol: float = TOL_KKT):
    """Largest violation of the first-order optimality conditions.

    On the scale of the criterion gradient, an active ``j`` needs
    ``(C w - diag C)_j + lam s_j / n = 0`` with ``s_j = sign(w_j) / theta_j^2``
    and an inactive ``j`` needs ``|(C w - diag C)_j| <= lam / (n theta_j^2)``.
    The residual is divided by ``max(1, max_j C_jj)``.

    Returns ``(residual, residual <= tol)``.
    """
    cov = _as_cov(cov)
    w = np.asarray(w, dtype=float)
    g = objective_gradient(w, cov)
    thr = weights.thresholds(lam, cov.n)
    active = w != 0
    viol = np.zeros_like(g)
    with np.errstate(invalid="ignore"):
        viol[active] = np.abs(g[active] + thr[active] * np.sign(w[active]))
        ina = ~active
        viol[ina] = np.maximum(np.abs(g[ina]) - thr[ina], 0.0)
    viol = np.where(np.isnan(viol), np.inf, viol)
    scale = max(1.0, float(np.max(np.diag(cov.C_hat)))) if cov.p else 1.0
    res = float(viol.max()) / scale if viol.size else 0.0
    return res, res <= tol


def closed_form_active(cov, weights: PenaltyWeights, lam: float, active, signs,
                       n: Optional[int] = None, ridge: float = 0.0,
                       max_cond: Optional[float] = 1e14) -> np.ndarray:
    """Solution with a given active set and sign pattern.

    ``w_A = (C_AA + ridge I)^{-1} [diag(C_AA) - (lam / n) s_A]`` with
    ``s_j = sign_j / theta_j^2``; zeros elsewhere. Blocks with condition
    number above ``max_cond`` are rejected (``None`` skips the check).
    """
    cov = _as_cov(cov)
    n = cov.n if n is None else n
    active = np.asarray(active, dtype=int)
    signs = np.asarray(signs, dtype=float)
    w = np.zeros(cov.p)
    if active.size == 0:
        return w
    if signs.shape[0] == cov.p:
        signs = signs[active]
    CA = cov.restrict(active) + ridge * np.eye(active.size)
    s = signs * weights.inv_theta_sq[active]
    if not np.all(np.isfinite(s)):
        raise SingularActiveBlockError("active set contains a component with infinite penalty")
    rhs = np.diag(cov.C_hat)[active] - lam / n * s
    try:
        if max_cond is not None:
            cond = np.linalg.cond(CA)
            if not np.isfinite(cond) or cond > max_cond:
                raise SingularActiveBlockError(f"active block is singular (cond={cond:.3g})")
        w[active] = np.linalg.solve(CA, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularActiveBlockError(str(exc)) from exc
    return w


def closed_form_identity(cov, prelim: PrelimEstimate, lam: float) -> CompositionRule:
    """Explicit minimiser when ``C`` is treated as diagonal.

    ``w_j = (1 - lam / (n theta_j^2 C_jj)) * I(n theta_j^2 C_jj > lam)``; for
    the normal location model ``theta_j`` is the sample mean. The returned
    objective and KKT residual refer to the diagonal criterion.
    """
    cov = _as_cov(cov)
    theta = np.asarray(prelim.theta_tilde, float)
    h = np.diag(cov.C_hat)
    stat = cov.n * theta * theta * h
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(stat > lam, 1.0 - lam / stat, 0.0)
    w = np.where(np.isfinite(w), w, 0.0)
    dcov = ScoreCovariance(np.diag(h), cov.n)
    weights = PenaltyWeights.from_theta(theta)
    res, _ = kkt_check(w, dcov, weights, lam)
    return CompositionRule(w, float(lam), objective(w, dcov, weights, lam), res)


def exhaustive_minimizer(cov, weights: PenaltyWeights, lam: float):
    """Brute-force minimiser over all ``3^p`` support/sign patterns.

    Each pattern is solved with :func:`closed_form_active` and kept only if
    its signs are consistent. Exponential cost; meant as a test oracle for
    small ``p``. Returns ``(w, objective)``.
    """
    cov = _as_cov(cov)
    p = cov.p
    best_w, best_f = np.zeros(p), objective(np.zeros(p), cov, weights, lam)
    allowed = [j for j in range(p) if np.isfinite(weights.inv_theta_sq[j])]
    for pattern in itertools.product((-1, 0, 1), repeat=len(allowed)):
        active = [j for j, s in zip(allowed, pattern) if s != 0]
        if not active:
            continue
        signs = np.array([s for s in pattern if s != 0], dtype=float)
        try:
            w = closed_form_active(cov, weights, lam, active, signs, max_cond=None)
        except SingularActiveBlockError:
            continue
        if np.any(np.sign(w[active]) != signs):
            continue
        f = objective(w, cov, weights, lam)
        if f < best_f:
            best_w, best_f = w, f
    return best_w, best_f


def z_statistics(scores: ScoreMatrix, prelim: PrelimEstimate, rule) -> np.ndarray:
    """``Z_j^2 = theta_j^2 |sum_i u_ij res_ij|`` with pseudo-residuals
    ``res_ij = u_ij - sum_k u_ik w_k``.

    ``rule`` may be a :class:`CompositionRule` or a weight vector.
    """
    w = rule.w_hat if isinstance(rule, CompositionRule) else np.asarray(rule, float)
    u = scores.u
    combo = u @ w
    inner = u.T @ combo
    cross = np.einsum("ij,ij->j", u, u) - inner
    theta = np.asarray(prelim.theta_tilde, float)
    return theta * theta * np.abs(cross)


def _theta_hat(prelim: PrelimEstimate, w) -> np.ndarray:
    return np.where(np.asarray(w) != 0, prelim.theta_tilde, 0.0)


def lambda_path(cov, prelim: PrelimEstimate, grid: Sequence[float], warm_start: bool = True,
                order: str = "increasing", tol: float = TOL_CD,
                max_sweeps: int = MAX_SWEEPS) -> SelectionPath:
    """Solve along a strictly increasing grid of penalty constants.

    ``order="decreasing"`` visits the grid from the largest value (the path
    is still returned in increasing order). Each solve is warm-started from
    its predecessor unless ``warm_start=False``.
    """
    cov = _as_cov(cov)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("lambda grid must be non-negative and strictly increasing")
    if order not in ("increasing", "decreasing"):
        raise ValueError("order must be 'increasing' or 'decreasing'")
    weights = PenaltyWeights.from_prelim(prelim)
    visit = range(grid.size) if order == "increasing" else range(grid.size - 1, -1, -1)
    out = [None] * grid.size
    w = None
    for k in visit:
        rule = coordinate_descent(cov, weights, float(grid[k]), w0=w if warm_start else None,
                                  tol=tol, max_sweeps=max_sweeps)
        w = rule.w_hat
        out[k] = PathEntry(float(grid[k]), rule, _theta_hat(prelim, rule.w_hat))
    return SelectionPath(out)


def lambda_max(cov, prelim: PrelimEstimate) -> float:
    """Smallest penalty constant at which ``w = 0`` is optimal."""
    cov = _as_cov(cov)
    t = np.asarray(prelim.theta_tilde, float)
    v = cov.n * np.diag(cov.C_hat) * t * t
    v = v[np.isfinite(v)]
    return float(v.max()) if v.size else 0.0


def lambda_for_target(cov, prelim: PrelimEstimate, target: int, max_evals: int = 60,
                      tol: float = TOL_CD, rtol: float = 1e-6) -> PathEntry:
    """Smallest penalty (to relative accuracy ``rtol``) with at most
    ``target`` selected components.

    Halves the penalty from ``lambda_max`` until too many components enter,
    then bisects on ``log(lam)``, warm-starting every solve. Stopping the
    scan early avoids the badly conditioned solves near ``lam = 0``. The
    selected count is not guaranteed to be monotone in ``lam``; the result
    is the upper end of the final bracket, which always satisfies the
    constraint. Uses at most ``max_evals`` solves.
    """
    cov = _as_cov(cov)
    if target < 0:
        raise ValueError("target must be non-negative")
    weights = PenaltyWeights.from_prelim(prelim)

    def solve(lam, w0=None):
        rule = coordinate_descent(cov, weights, lam, w0=w0, tol=tol)
        return PathEntry(float(lam), rule, _theta_hat(prelim, rule.w_hat))

    top = lambda_max(cov, prelim)
    if top <= 0 or target >= cov.p:
        return solve(0.0)
    hi_entry = solve(top * (1 + 1e-9))
    floor = top * 1e-12
    lo = None
    evals = 1
    while evals < max_evals:
        lam = hi_entry.lam / 2
        if lam < floor:
            return hi_entry
        e = solve(lam, w0=hi_entry.rule.w_hat)
        evals += 1
        if e.p_hat > target:
            lo = lam
            break
        hi_entry = e
    if lo is None:
        return hi_entry
    log_lo, log_hi = math.log(lo), math.log(hi_entry.lam)
    while evals < max_evals and log_hi - log_lo > rtol:
        mid = math.exp(0.5 * (log_lo + log_hi))
        e = solve(mid, w0=hi_entry.rule.w_hat)
        evals += 1
        if e.p_hat <= target:
            log_hi, hi_entry = math.log(mid), e
        else:
            log_lo = math.log(mid)
    return hi_entry


def population_rule(C_true, theta_true, lam: float, tol: float = TOL_CD) -> CompositionRule:
    """Minimiser of the population criterion
    ``1/2 w' C w - w' diag(C) + lam sum_j |w_j| / theta_j^2``.

    For ``lam > 0`` components with ``theta_j = 0`` carry an infinite penalty,
    so ``w_j = 0`` there; at ``lam = 0`` the penalty vanishes altogether and
    the minimiser is ``C^{-1} diag(C)``.
    """
    cov = ScoreCovariance(np.asarray(C_true, float), 1)
    if lam == 0:
        weights = PenaltyWeights(np.zeros(cov.p))
    else:
        weights = PenaltyWeights.from_theta(theta_true)
    return coordinate_descent(cov, weights, lam, tol=tol)
