"""Monte Carlo designs for sparse location, probit and correlation models.

Replicate ``r`` of a study draws from its own generator
``default_rng(SeedSequence(seed, spawn_key=(r,)))``, so results do not
depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariance import build_score_matrix, empirical_covariance
from .estimation import solve_all
from .metrics import oracle_mle, selection_metrics
from .score_models import (
    GaussianLocationModel,
    PairwiseCorrelationModel,
    ProbitRegressionModel,
    pair_list,
)
from .selector import PenaltyWeights, coordinate_descent, lambda_path, population_rule, z_statistics

__all__ = [
    "CholeskyFailure",
    "SimulationSetting",
    "ReplicateResult",
    "ExperimentResult",
    "TABLE1_LAMBDAS",
    "TABLE2_LAMBDAS",
    "TABLE3_LAMBDAS",
    "replicate_rng",
    "equicorrelation",
    "mvn_sample",
    "gen_setting1",
    "gen_setting2",
    "gen_setting3",
    "generate",
    "build_model",
    "run_replicate",
    "run_experiment",
    "null_exceedance",
    "rule_consistency",
    "selection_consistency",
]

TABLE1_LAMBDAS = (0.750, 1.292, 2.225, 3.832, 6.599, 11.365, 19.574, 33.713, 58.062, 100.000)
TABLE2_LAMBDAS = (0.200, 0.360, 0.649, 1.170, 2.107, 3.796, 6.840, 12.323, 22.202, 40.000)
TABLE3_LAMBDAS = (0.300, 0.426, 0.604, 0.857, 1.216, 1.726, 2.450, 3.476, 4.933, 7.000)

KINDS = ("location", "probit", "correlation")


class CholeskyFailure(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SimulationSetting:
    """One Monte Carlo design.

    ``theta_active`` lists the block values of the nonzero parameters, each
    repeated ``block_size`` times (location/probit). For correlations,
    ``support`` lists the nonzero pairs ``(j1, j2)`` (0-based); by default
    the first off-diagonal band ``(j, j+1)``, ``j = 0..9``.
    ``theta_active=()`` gives an all-zero parameter.
    """

    kind: str = "location"
    n: int = 250
    p: int = 100
    d: int = 15
    sigma_offdiag: float = 0.0
    correlation_pattern: str = "uniform"
    theta_active: Optional[Tuple[float, ...]] = None
    block_size: int = 5
    support: Optional[Tuple[Tuple[int, int], ...]] = None
    alpha: float = 0.1
    seed: int = 20240611
    replicates: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.n < 2 or self.replicates < 1:
            raise ValueError("need n >= 2 and at least one replicate")
        if self.correlation_pattern not in ("uniform", "toeplitz"):
            raise ValueError("correlation_pattern must be 'uniform' or 'toeplitz'")

    @property
    def default_active(self) -> Tuple[float, ...]:
        if self.kind == "location":
            return (5.0, 4.0, 3.0, 2.0, 1.0)
        return (1.5, 1.25, 1.0, 0.75, 0.5)

    @property
    def n_params(self) -> int:
        return self.d * (self.d - 1) // 2 if self.kind == "correlation" else self.p

    def support_pairs(self) -> List[Tuple[int, int]]:
        if self.support is not None:
            return [tuple(map(int, s)) for s in self.support]
        return [(j, j + 1) for j in range(min(10, self.d - 1))]

    def theta_true(self) -> np.ndarray:
        if self.kind == "correlation":
            model = PairwiseCorrelationModel(self.d)
            theta = np.zeros(model.p)
            if self.theta_active == ():
                return theta
            for j1, j2 in self.support_pairs():
                k = model.index_of(j1, j2)
                if self.correlation_pattern == "uniform":
                    theta[k] = 0.5
                else:
                    theta[k] = math.exp(-0.1 * abs(j1 - j2))
            return theta
        vals = self.default_active if self.theta_active is None else self.theta_active
        theta = np.repeat(np.asarray(vals, float), self.block_size)
        if theta.size > self.p:
            raise ValueError("more nonzero parameters than p")
        return np.concatenate([theta, np.zeros(self.p - theta.size)])

    def covariance(self) -> np.ndarray:
        """``Sigma`` (location/probit) or ``R`` (correlation)."""
        if self.kind == "correlation":
            R = np.eye(self.d)
            theta = self.theta_true()
            pr = pair_list(self.d)
            R[pr[:, 0], pr[:, 1]] = theta
            R[pr[:, 1], pr[:, 0]] = theta
            return R
        return equicorrelation(self.p, self.sigma_offdiag)


@dataclass
class ReplicateResult:
    index: int
    lambdas: np.ndarray
    theta_hat: np.ndarray  # (L, p)
    oracle: np.ndarray  # (p,)
    p_hat: np.ndarray  # (L,)
    tpp: np.ndarray  # (L,), nan when undefined
    tnp: np.ndarray
    fdp: np.ndarray
    kkt_residual: np.ndarray
    converged: np.ndarray
    prelim_converged: int


@dataclass
class ExperimentResult:
    setting: SimulationSetting
    lambdas: np.ndarray
    replicates: List[ReplicateResult] = field(repr=False, default_factory=list)

    def table(self) -> List[Dict[str, float]]:
        """Per-penalty Monte Carlo means (percentages for TPP/TNP/FDP),
        their standard errors, RMSEs and relative efficiency."""
        theta = self.setting.theta_true()
        R = len(self.replicates)
        ph = np.array([r.p_hat for r in self.replicates], float)
        tpp = np.array([r.tpp for r in self.replicates], float)
        tnp = np.array([r.tnp for r in self.replicates], float)
        fdp = np.array([r.fdp for r in self.replicates], float)
        kkt = np.array([r.kkt_residual for r in self.replicates], float)
        conv = np.array([r.converged for r in self.replicates], bool)
        est = np.array([r.theta_hat for r in self.replicates], float)  # (R, L, p)
        orc = np.array([r.oracle for r in self.replicates], float)
        rmse_orc = math.sqrt(float(np.mean((orc - theta) ** 2)))
        rows = []

        def mean_se(a):
            a = a[np.isfinite(a)]
            if a.size == 0:
                return math.nan, math.nan
            se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan
            return float(a.mean()), se

        for k, lam in enumerate(self.lambdas):
            r_est = math.sqrt(float(np.mean((est[:, k, :] - theta) ** 2)))
            row = {"lambda": float(lam), "replicates": R}
            for name, arr, scale in (("p_hat", ph, 1.0), ("tpp", tpp, 100.0),
                                     ("tnp", tnp, 100.0), ("fdp", fdp, 100.0)):
                m, se = mean_se(arr[:, k] * scale)
                row[name], row[name + "_se"] = m, se
            row["rmse"] = r_est
            row["rmse_oracle"] = rmse_orc
            row["relative_efficiency"] = rmse_orc / r_est if r_est > 0 else math.nan
            row["max_kkt_residual"] = float(kkt[:, k].max())
            row["nonconverged"] = int((~conv[:, k]).sum())
            rows.append(row)
        return rows


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def equicorrelation(p: int, rho: float) -> np.ndarray:
    S = np.full((p, p), float(rho))
    np.fill_diagonal(S, 1.0)
    return S


def _cholesky(cov) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("covariance matrix is not positive definite") from exc


def mvn_sample(mean, cov, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of ``N(mean, cov)`` as ``Z L^T + mean`` with ``cov = L L^T``."""
    cov = np.asarray(cov, float)
    mean = np.broadcast_to(np.asarray(mean, float), (cov.shape[0],))
    L = _cholesky(cov)
    z = rng.standard_normal((n, cov.shape[0]))
    return z @ L.T + mean


def gen_setting1(cfg: SimulationSetting, rng):
    theta = cfg.theta_true()
    return mvn_sample(theta, cfg.covariance(), cfg.n, rng), theta


def gen_setting2(cfg: SimulationSetting, rng):
    theta = cfg.theta_true()
    x = rng.standard_normal(cfg.n)
    L = _cholesky(cfg.covariance())
    z = rng.standard_normal((cfg.n, cfg.p)) @ L.T + cfg.alpha + np.outer(x, theta)
    return (z >= 0).astype(float), x, theta


def gen_setting3(cfg: SimulationSetting, rng):
    R = cfg.covariance()
    try:
        L = _cholesky(R)
    except CholeskyFailure as exc:
        raise CholeskyFailure(
            "correlation matrix implied by the chosen support is not positive definite; "
            "choose a different support"
        ) from exc
    z = rng.standard_normal((cfg.n, cfg.d))
    return z @ L.T, cfg.theta_true()


def build_model(cfg: SimulationSetting, x=None):
    if cfg.kind == "location":
        return GaussianLocationModel(cfg.p)
    if cfg.kind == "probit":
        return ProbitRegressionModel(cfg.p, x, cfg.alpha)
    return PairwiseCorrelationModel(cfg.d)


def generate(cfg: SimulationSetting, rng):
    """Return ``(model, data, theta_true)`` for one replicate."""
    if cfg.kind == "location":
        data, theta = gen_setting1(cfg, rng)
        return build_model(cfg), data, theta
    if cfg.kind == "probit":
        data, x, theta = gen_setting2(cfg, rng)
        return build_model(cfg, x), data, theta
    data, theta = gen_setting3(cfg, rng)
    return build_model(cfg), data, theta


def run_replicate(cfg: SimulationSetting, lambdas: Sequence[float], index: int) -> ReplicateResult:
    rng = replicate_rng(cfg.seed, index)
    model, data, theta = generate(cfg, rng)
    prelim = solve_all(model, data)
    cov = empirical_covariance(build_score_matrix(model, data, prelim))
    path = lambda_path(cov, prelim, lambdas)
    oracle = oracle_mle(model, data, theta)
    L = len(path)
    out = dict(p_hat=np.zeros(L, int), tpp=np.zeros(L), tnp=np.zeros(L), fdp=np.zeros(L),
               kkt=np.zeros(L), conv=np.zeros(L, bool))
    theta_hat = np.zeros((L, theta.size))
    for k, entry in enumerate(path):
        m = selection_metrics(entry.theta_hat, theta)
        theta_hat[k] = entry.theta_hat
        out["p_hat"][k] = m.p_hat_star
        out["tpp"][k] = np.nan if m.tpp is None else m.tpp
        out["tnp"][k] = np.nan if m.tnp is None else m.tnp
        out["fdp"][k] = m.fdp
        out["kkt"][k] = entry.rule.kkt_residual
        out["conv"][k] = entry.rule.converged
    return ReplicateResult(index, np.asarray(lambdas, float), theta_hat, oracle, out["p_hat"],
                           out["tpp"], out["tnp"], out["fdp"], out["kkt"], out["conv"],
                           int(prelim.converged.sum()))


def _run_chunk(args):
    cfg, lambdas, idx = args
    return [run_replicate(cfg, lambdas, r) for r in idx]


def run_experiment(cfg: SimulationSetting, lambda_grid: Sequence[float], workers: int = 1
                   ) -> ExperimentResult:
    """Run ``cfg.replicates`` replicates over ``lambda_grid``.

    With ``workers > 1`` replicates are spread over processes; the
    aggregated output is identical either way.
    """
    lambdas = np.asarray(sorted(lambda_grid), float)
    idx = list(range(cfg.replicates))
    if workers <= 1:
        reps = [run_replicate(cfg, lambdas, r) for r in idx]
    else:
        chunks = [idx[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(cfg, lambdas, c) for c in chunks]))
        reps = sorted((r for part in parts for r in part), key=lambda r: r.index)
    return ExperimentResult(cfg, lambdas, reps)


def null_exceedance(cfg: SimulationSetting, threshold: float) -> Tuple[float, np.ndarray]:
    """Z^2 statistics at the empty rule ``w = 0`` across replicates.

    Returns the fraction of statistics above ``threshold`` and the array of
    all statistics (replicates x p).
    """
    stats = []
    for r in range(cfg.replicates):
        model, data, _ = generate(cfg, replicate_rng(cfg.seed, r))
        prelim = solve_all(model, data)
        scores = build_score_matrix(model, data, prelim)
        stats.append(z_statistics(scores, prelim, np.zeros(model.p)))
    stats = np.asarray(stats)
    return float(np.mean(stats > threshold)), stats


def rule_consistency(cfg: SimulationSetting, ns: Sequence[int], lam: float = 0.0
                     ) -> List[float]:
    """Mean ``||w_hat - w||_2`` over replicates for each sample size.

    ``w`` is the population rule computed from the true score covariance,
    available in closed form for the normal location model
    (``C = D^{-1} Sigma D^{-1}`` with ``D = diag(sigma^2)``, here unit).
    """
    if cfg.kind != "location":
        raise ValueError("population score covariance is only available for the location model")
    theta = cfg.theta_true()
    C_true = cfg.covariance()
    # the empirical criterion scales the penalty by 1/n; the population one does not
    out = []
    for n in ns:
        c = replace(cfg, n=int(n))
        w_pop = population_rule(C_true, theta, lam / n).w_hat
        errs = []
        for r in range(c.replicates):
            model, data, _ = generate(c, replicate_rng(c.seed, r))
            prelim = solve_all(model, data)
            cov = empirical_covariance(build_score_matrix(model, data, prelim))
            w = coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), lam).w_hat
            errs.append(np.linalg.norm(w - w_pop))
        out.append(float(np.mean(errs)))
    return out


def selection_consistency(cfg: SimulationSetting, ns: Sequence[int], lam_of_n=math.log
                          ) -> List[float]:
    """Fraction of replicates with exactly the true support, per sample size,
    at penalty ``lam_of_n(n)``."""
    theta = cfg.theta_true()
    truth = theta != 0
    out = []
    for n in ns:
        c = replace(cfg, n=int(n))
        hits = 0
        for r in range(c.replicates):
            model, data, _ = generate(c, replicate_rng(c.seed, r))
            prelim = solve_all(model, data)
            cov = empirical_covariance(build_score_matrix(model, data, prelim))
            rule = coordinate_descent(cov, PenaltyWeights.from_prelim(prelim), lam_of_n(n))
            hits += bool(np.array_equal(rule.w_hat != 0, truth))
        out.append(hits / c.replicates)
    return out
