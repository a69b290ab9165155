"""Command-line interface: ``sparsecl {fit,path,simulate,analyze,graph}``.

Exit status: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np
import scipy

from . import __version__
from .analysis import fit, fit_path, subsample_rmse
from .io import (
    ConfigError,
    DataError,
    RunConfig,
    export_graph,
    load_csv,
    parse_lambda_grid,
    read_config,
    standardize,
    write_json,
    write_table,
)
from .score_models import GaussianLocationModel, PairwiseCorrelationModel, ProbitRegressionModel
from .simulate import (
    TABLE1_LAMBDAS,
    TABLE2_LAMBDAS,
    TABLE3_LAMBDAS,
    SimulationSetting,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_SETTING_KIND = {1: "location", 2: "probit", 3: "correlation"}
_KIND_SETTING = {v: k for k, v in _SETTING_KIND.items()}
_DEFAULT_GRIDS = {1: TABLE1_LAMBDAS, 2: TABLE2_LAMBDAS, 3: TABLE3_LAMBDAS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, help="coordinate descent tolerance")
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--model", choices=("location", "probit", "correlation"))
    p.add_argument("--covariate", help="probit: name of the covariate column")
    p.add_argument("--alpha", type=float, help="probit: known intercept")
    p.add_argument("--no-standardize", dest="standardize", action="store_false",
                   help="correlation: use the data as given")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsecl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sd = argparse.SUPPRESS

    p = sub.add_parser("fit", help="fit one penalised rule", argument_default=sd)
    _common(p)
    _data_args(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--target-sparsity", dest="target_sparsity", type=int)

    p = sub.add_parser("path", help="fit a grid of penalties", argument_default=sd)
    _common(p)
    _data_args(p)
    p.add_argument("--lambda-grid", dest="lambda_grid", help="min:max:count[:log|lin]")
    p.add_argument("--lambda", dest="lam", type=float)

    p = sub.add_parser("simulate", help="Monte Carlo study", argument_default=sd)
    _common(p)
    p.add_argument("--setting", type=int, choices=(1, 2, 3))
    p.add_argument("--model", choices=("location", "probit", "correlation"))
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.add_argument("--replicates", type=int)
    p.add_argument("--full", action="store_const", const=2500, dest="replicates",
                   help="2500 replicates")
    p.add_argument("--threads", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--sigma-offdiag", dest="sigma_offdiag", type=float)
    p.add_argument("--pattern", dest="correlation_pattern", choices=("uniform", "toeplitz"))

    p = sub.add_parser("analyze", help="subsample accuracy of correlation fits",
                       argument_default=sd)
    _common(p)
    p.add_argument("--input")
    p.add_argument("--folds", type=int)
    p.add_argument("--targets", type=lambda s: tuple(int(t) for t in s.split(",")))

    p = sub.add_parser("graph", help="export the selected correlation graph", argument_default=sd)
    _common(p)
    p.add_argument("--input")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--target-sparsity", dest="target_sparsity", type=int)
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    return parser


def resolve_config(argv: Optional[List[str]] = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    cfg = RunConfig(command=args.pop("command"))
    path = args.pop("config", None)
    if path is not None:
        cfg = read_config(path, cfg)
    if cfg.command == "simulate":
        if "setting" in args and "model" not in args:
            args["model"] = _SETTING_KIND[args["setting"]]
    cfg = replace(cfg, **args)
    if cfg.command == "simulate" and cfg.setting is None:
        cfg = replace(cfg, setting=_KIND_SETTING[cfg.model])
    return cfg.validate()


def _versions():
    return {"sparsecl": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _load(cfg: RunConfig):
    if cfg.input is None:
        raise ConfigError("--input is required")
    ds = load_csv(cfg.input)
    names = list(ds.column_names)
    if cfg.model == "correlation":
        if cfg.standardize:
            ds = standardize(ds)
        model = PairwiseCorrelationModel(ds.d)
        labels = [f"{names[a]}:{names[b]}" for a, b in model.pairs]
        return model, ds.values, labels, names
    if cfg.model == "location":
        return GaussianLocationModel(ds.d), ds.values, names, names
    if cfg.covariate is None:
        raise ConfigError("probit model needs --covariate naming the covariate column")
    if cfg.covariate not in names:
        raise DataError(f"covariate column {cfg.covariate!r} not found")
    k = names.index(cfg.covariate)
    keep = [j for j in range(ds.d) if j != k]
    y = ds.values[:, keep]
    model = ProbitRegressionModel(len(keep), ds.values[:, k], cfg.alpha)
    try:
        y = model.validate(y)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return model, y, [names[j] for j in keep], names


def _fit_from(cfg: RunConfig):
    model, data, labels, names = _load(cfg)
    if cfg.lam is None and cfg.target_sparsity is None:
        raise ConfigError("give --lambda or --target-sparsity")
    res = fit(model, data, lam=cfg.lam, target=cfg.target_sparsity, tol=cfg.tol,
              max_sweeps=cfg.max_sweeps)
    return model, data, labels, names, res


def _manifest(cfg: RunConfig, **extra):
    # out_dir is left out so that runs written to different places compare equal
    config = {k: v for k, v in cfg.as_dict().items() if k != "out_dir"}
    out = {"command": cfg.command, "config": config, "seed": cfg.seed,
           "versions": _versions()}
    out.update(extra)
    return out


def cmd_fit(cfg: RunConfig) -> List[str]:
    model, data, labels, _, res = _fit_from(cfg)
    se = res.standard_errors()
    rows = [[j, labels[j], float(res.prelim.theta_tilde[j]), float(res.rule.w_hat[j]),
             float(res.theta_hat[j]), int(res.rule.w_hat[j] != 0), float(se[j]), float(res.z2[j])]
            for j in range(model.p)]
    fit_csv = os.path.join(cfg.out_dir, "fit.csv")
    write_table(fit_csv, ["index", "name", "theta_tilde", "w_hat", "theta_hat", "selected", "se",
                          "z2"], rows)
    man = os.path.join(cfg.out_dir, "manifest.json")
    write_json(man, _manifest(cfg, n=int(data.shape[0]), p=model.p, **_rule_summary(res.rule),
                              active=[labels[j] for j in res.rule.active_set]))
    return [fit_csv, man]


def _rule_summary(rule):
    return {"lambda": float(rule.lam), "p_hat": int(rule.p_hat),
            "kkt_residual": float(rule.kkt_residual), "converged": bool(rule.converged),
            "objective": float(rule.objective_value)}


def cmd_path(cfg: RunConfig) -> List[str]:
    if cfg.lambda_grid is not None:
        grid = parse_lambda_grid(cfg.lambda_grid)
    elif cfg.lam is not None:
        grid = np.array([cfg.lam])
    else:
        raise ConfigError("give --lambda-grid or --lambda")
    model, data, labels, _ = _load(cfg)
    prelim, path = fit_path(model, data, grid, tol=cfg.tol, max_sweeps=cfg.max_sweeps)
    summary = [[e.lam, e.p_hat, float(e.rule.kkt_residual), int(e.rule.converged),
                float(e.rule.objective_value)] for e in path]
    long = [[e.lam, j, labels[j], float(e.rule.w_hat[j]), float(e.theta_hat[j])]
            for e in path for j in range(model.p)]
    s_csv = os.path.join(cfg.out_dir, "path_summary.csv")
    l_csv = os.path.join(cfg.out_dir, "path.csv")
    write_table(s_csv, ["lambda", "p_hat", "kkt_residual", "converged", "objective"], summary)
    write_table(l_csv, ["lambda", "index", "name", "w_hat", "theta_hat"], long)
    man = os.path.join(cfg.out_dir, "manifest.json")
    write_json(man, _manifest(cfg, n=int(data.shape[0]), p=model.p,
                              theta_tilde=[float(t) for t in prelim.theta_tilde]))
    return [s_csv, l_csv, man]


def cmd_simulate(cfg: RunConfig) -> List[str]:
    setting = SimulationSetting(kind=_SETTING_KIND[cfg.setting], n=cfg.n, p=cfg.p, d=cfg.d,
                                sigma_offdiag=cfg.sigma_offdiag,
                                correlation_pattern=cfg.correlation_pattern,
                                seed=cfg.seed, replicates=cfg.replicates)
    grid = (parse_lambda_grid(cfg.lambda_grid) if cfg.lambda_grid is not None
            else np.asarray(_DEFAULT_GRIDS[cfg.setting]))
    res = run_experiment(setting, grid, workers=cfg.threads)
    rows = res.table()
    header = list(rows[0].keys())
    out_csv = os.path.join(cfg.out_dir, "simulation.csv")
    write_table(out_csv, header, [[r[h] for h in header] for r in rows])
    man = os.path.join(cfg.out_dir, "manifest.json")
    write_json(man, _manifest(cfg, lambdas=[float(x) for x in res.lambdas],
                              theta_true=[float(t) for t in setting.theta_true()]))
    return [out_csv, man]


def cmd_analyze(cfg: RunConfig) -> List[str]:
    if cfg.input is None:
        raise ConfigError("--input is required")
    ds = standardize(load_csv(cfg.input))
    rows = subsample_rmse(ds, cfg.folds, cfg.targets, cfg.seed)
    out_csv = os.path.join(cfg.out_dir, "subsample_rmse.csv")
    write_table(out_csv, ["target", "rmse", "rmse_se", "rmse_soft_threshold", "mean_selected"],
                [[r.target, r.rmse, r.rmse_se, r.rmse_soft, r.mean_selected] for r in rows])
    man = os.path.join(cfg.out_dir, "manifest.json")
    write_json(man, _manifest(cfg, n=ds.n, d=ds.d))
    return [out_csv, man]


def cmd_graph(cfg: RunConfig) -> List[str]:
    cfg = replace(cfg, model="correlation")
    model, data, labels, names, res = _fit_from(cfg)
    csv_path, dot_path = export_graph(model.pairs, res.rule.active_set, names,
                                      os.path.join(cfg.out_dir, "graph"))
    man = os.path.join(cfg.out_dir, "manifest.json")
    write_json(man, _manifest(cfg, n=int(data.shape[0]), p=model.p, **_rule_summary(res.rule),
                              edges=[labels[j] for j in res.rule.active_set]))
    return [csv_path, dot_path, man]


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "graph": cmd_graph}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"sparsecl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        start = time.perf_counter()
        written = COMMANDS[cfg.command](cfg)
        elapsed = time.perf_counter() - start
        # wall-clock times live apart from the results so that reruns compare byte-for-byte
        write_json(os.path.join(cfg.out_dir, "timings.json"),
                   {"command": cfg.command, "seconds": round(elapsed, 3)})
    except ConfigError as exc:
        print(f"sparsecl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"sparsecl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"sparsecl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
