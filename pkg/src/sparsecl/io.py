"""CSV ingestion, standardisation, result serialisation and graph export."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "DataError",
    "ConfigError",
    "Dataset",
    "RunConfig",
    "load_csv",
    "save_csv",
    "write_table",
    "write_json",
    "standardize",
    "export_graph",
    "parse_lambda_grid",
    "read_config",
    "format_float",
]


class DataError(ValueError):
    """Malformed or unusable input data."""


class ConfigError(ValueError):
    """Invalid run configuration."""


def format_float(v) -> str:
    """Decimal text that round-trips a double exactly (17 significant digits)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    column_names: Tuple[str, ...]
    standardized: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_csv(path) -> Dataset:
    """Read a comma-separated numeric table with an optional header row.

    The first row is taken as a header when any of its cells is not a number.
    Headerless files get columns ``c1 .. cd``. Non-finite cells are rejected.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(k + 1, r) for k, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    first_line, first = rows[0]
    if all(_is_number(c) for c in first):
        names = tuple(f"c{k + 1}" for k in range(len(first)))
        body = rows
    else:
        names = tuple(c.strip() for c in first)
        if len(set(names)) != len(names):
            raise DataError(f"{path}: line {first_line}: duplicate column names")
        body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    d = len(names)
    out = np.empty((len(body), d))
    for i, (line, row) in enumerate(body):
        if len(row) != d:
            raise DataError(f"{path}: line {line}: expected {d} fields, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: line {line}, column {j + 1} ({names[j]}): non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: line {line}, column {j + 1} ({names[j]}): non-finite value {cell!r}"
                )
            out[i, j] = v
    return Dataset(out, names)


def save_csv(ds: Dataset, path) -> None:
    write_table(path, list(ds.column_names), ds.values.tolist())


def write_table(path, header: Sequence[str], rows) -> None:
    """Write rows as CSV, formatting floats with :func:`format_float`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def standardize(ds: Dataset) -> Dataset:
    """Centre each column and scale to unit sample standard deviation (divisor n-1)."""
    x = ds.values
    if x.shape[0] < 2:
        raise DataError("need at least two rows to standardise")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DataError(f"column {ds.column_names[bad[0]]!r} has zero variance")
    return Dataset((x - mean) / sd, ds.column_names, standardized=True)


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_graph(pairs, active, names: Sequence[str], path) -> Tuple[str, str]:
    """Write the selected pairs as an edge list CSV and an undirected DOT graph.

    ``pairs`` is the ``p x 2`` pair index table of a correlation model and
    ``active`` the selected indices. Writes ``<path>.csv`` and ``<path>.dot``
    and returns both paths. Every name appears as a node, so isolated
    variables are kept.
    """
    pairs = np.asarray(pairs, int)
    names = list(names)
    if pairs.size and pairs.max() >= len(names):
        raise ValueError("pair index exceeds the number of names")
    base = os.fspath(path)
    if base.endswith(".dot") or base.endswith(".csv"):
        base = base[:-4]
    edges = [tuple(pairs[j]) for j in np.asarray(active, int)]
    csv_path, dot_path = base + ".csv", base + ".dot"
    try:
        write_table(csv_path, ["node1", "node2", "index"],
                    [[names[a], names[b], int(j)] for (a, b), j in zip(edges, active)])
        with open(dot_path, "w", encoding="utf-8") as fh:
            fh.write("graph selection {\n")
            for nm in names:
                fh.write(f"  {_dot_id(nm)};\n")
            for a, b in edges:
                fh.write(f"  {_dot_id(names[a])} -- {_dot_id(names[b])};\n")
            fh.write("}\n")
    except OSError as exc:
        raise OSError(f"cannot write graph to {base}: {exc}") from exc
    return csv_path, dot_path


def parse_lambda_grid(text: str) -> np.ndarray:
    """Parse ``min:max:count[:log|:lin]`` (log spacing by default)."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"lambda grid {text!r} is not of the form min:max:count[:log|lin]")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"lambda grid {text!r} has non-numeric fields") from None
    mode = parts[3] if len(parts) == 4 else "log"
    if mode not in ("log", "lin"):
        raise ConfigError(f"lambda grid spacing must be 'log' or 'lin', got {mode!r}")
    if count < 1 or lo < 0 or hi < lo:
        raise ConfigError(f"lambda grid {text!r} needs 0 <= min <= max and count >= 1")
    if count == 1:
        return np.array([lo])
    if mode == "log":
        if lo <= 0:
            raise ConfigError("log-spaced lambda grid needs min > 0")
        return np.geomspace(lo, hi, count)
    return np.linspace(lo, hi, count)


@dataclass
class RunConfig:
    """Settings shared by the CLI subcommands.

    Values come from an optional ``key = value`` file and are then
    overridden by command-line flags.
    """

    command: str = ""
    input: Optional[str] = None
    model: str = "correlation"
    lam: Optional[float] = None
    lambda_grid: Optional[str] = None
    target_sparsity: Optional[int] = None
    seed: int = 20240611
    out_dir: str = "results"
    replicates: int = 200
    threads: int = 1
    standardize: bool = True
    covariate: Optional[str] = None
    alpha: float = 0.0
    setting: Optional[int] = None
    n: int = 250
    p: int = 100
    d: int = 15
    sigma_offdiag: float = 0.0
    correlation_pattern: str = "uniform"
    folds: int = 30
    targets: Tuple[int, ...] = (25, 12, 6)
    tol: float = 1e-9
    max_sweeps: int = 10000

    def validate(self) -> "RunConfig":
        if self.model not in ("location", "probit", "correlation"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.target_sparsity is not None and self.target_sparsity < 0:
            raise ConfigError("target sparsity must be non-negative")
        if self.lam is not None and self.target_sparsity is not None:
            raise ConfigError("give either a lambda or a target sparsity, not both")
        if self.lambda_grid is not None:
            parse_lambda_grid(self.lambda_grid)
        if self.replicates < 1 or self.threads < 1 or self.folds < 2:
            raise ConfigError("replicates and threads must be >= 1 and folds >= 2")
        if self.setting is not None and self.setting not in (1, 2, 3):
            raise ConfigError("setting must be 1, 2 or 3")
        if self.correlation_pattern not in ("uniform", "toeplitz"):
            raise ConfigError("correlation_pattern must be 'uniform' or 'toeplitz'")
        if self.tol <= 0 or self.max_sweeps < 1:
            raise ConfigError("tol must be positive and max_sweeps >= 1")
        return self

    def as_dict(self) -> Dict[str, object]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_KEY_ALIASES = {"lambda": "lam", "lambda-grid": "lambda_grid", "target-sparsity": "target_sparsity",
                "out-dir": "out_dir"}


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if name == "targets":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if name == "standardize":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if name in ("lam", "alpha", "sigma_offdiag", "tol"):
            return float(raw)
        if name in ("target_sparsity", "seed", "replicates", "threads", "setting", "n", "p", "d",
                    "folds", "max_sweeps"):
            return int(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {name}") from None
    return raw


def read_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    cfg = base if base is not None else RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = _KEY_ALIASES.get(key, key.replace("-", "_"))
            if key not in known:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            updates[key] = _coerce(key, val, getattr(cfg, key))
    return replace(cfg, **updates)
