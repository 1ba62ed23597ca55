"""CSV/JSON serialization for datasets, configurations and fit artifacts.

Data CSV schema: a header row with columns ``s1, s2, t, y`` (``y`` optional
for prediction targets), ``trials`` for binomial data, and one ``x_<name>``
column per predictor.  The intercept is implicit and controlled by the run
configuration.  Missing or non-numeric cells are hard errors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernel as kern
from .errors import ConfigError
from .expfam import Family, FamilySpec
from .model import CandidateModel, Dataset, Hyperparams, PosteriorSample
from .stack import StackingWeights, build_grid

__all__ = [
    "RunConfig",
    "read_table",
    "write_table",
    "dataset_from_table",
    "dataset_to_rows",
    "load_config",
    "write_json",
    "save_sample",
    "load_sample",
    "model_from_dict",
]

INTERCEPT = "intercept"


def _num(value, line, col):
    try:
        v = float(value)
    except ValueError:
        raise ConfigError(f"line {line}: column {col!r} is not numeric: {value!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"line {line}: column {col!r} is not finite")
    return v


def read_table(path) -> dict:
    """Read a numeric CSV into ``{column: ndarray}`` with line-numbered errors."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file (header row required)") from None
        if len(set(header)) != len(header):
            raise ConfigError(f"{path}: duplicate column names in header")
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, v in zip(header, row):
                if v.strip() == "":
                    raise ConfigError(f"{path}: line {line}: missing value in column {col!r}")
                vals.append(_num(v, line, col))
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, columns: dict):
    """Write ``{column: array}`` as CSV with round-trip float formatting."""
    names = list(columns)
    cols = [np.asarray(columns[c]) for c in names]
    n = len(cols[0]) if cols else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])


@dataclass
class RunConfig:
    """Fit configuration (a single JSON document)."""

    family: str
    predictors: list
    varying: list
    grids: dict
    intercept: bool = True
    K: int = 10
    S: int = 500
    N: int = 1000
    seed: int = 0
    workers: int = 1
    nu_beta: float = 3.0
    nu_z: float = 3.0
    retain_all: bool = False
    predict_draws: int = 1000

    def __post_init__(self):
        try:
            self.family = Family(self.family).value
        except ValueError:
            raise ConfigError(f"unknown family {self.family!r}") from None
        for key in ("alpha_eps", "sigma_xi", "phi1", "phi2"):
            g = self.grids.get(key)
            if not isinstance(g, list) or not g:
                raise ConfigError(f"grid {key!r} must be a non-empty array")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in g):
                raise ConfigError(f"grid {key!r} must hold positive numbers")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.S < 1 or self.N < 1:
            raise ConfigError("S and N must be positive")
        names = self.column_names
        for v in self.varying:
            if v not in names:
                raise ConfigError(f"varying coefficient {v!r} is not a model column {names}")
        if not self.varying:
            raise ConfigError("at least one varying coefficient is required")

    @property
    def column_names(self) -> list:
        return ([INTERCEPT] if self.intercept else []) + list(self.predictors)

    @property
    def varying_indices(self) -> list:
        return [self.column_names.index(v) for v in self.varying]

    @property
    def hyper(self) -> Hyperparams:
        return Hyperparams(self.nu_beta, self.nu_z)

    def candidates(self):
        g = self.grids
        return build_grid(g["alpha_eps"], g["sigma_xi"], g["phi1"], g["phi2"], self.family)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


_FIT_KEYS = set(RunConfig.__dataclass_fields__)


def load_config(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return doc


def run_config(doc: dict, **overrides) -> RunConfig:
    fit = dict(doc.get("fit", doc))
    unknown = set(fit) - _FIT_KEYS - {"simulate"}
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    fit.pop("simulate", None)
    fit.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**fit)
    except TypeError as exc:
        raise ConfigError(f"incomplete configuration: {exc}") from None


def dataset_from_table(table: dict, cfg: RunConfig, require_y=True, source="data") -> Dataset:
    """Build a :class:`Dataset` from a parsed CSV according to ``cfg``."""
    need = ["s1", "s2", "t"] + [f"x_{p}" for p in cfg.predictors]
    if require_y:
        need.append("y")
    if cfg.family == Family.BINOMIAL.value:
        need.append("trials")
    missing = [c for c in need if c not in table]
    if missing:
        raise ConfigError(f"{source}: missing columns {missing}")
    n = len(table["s1"])
    coords = np.column_stack([table["s1"], table["s2"], table["t"]]) if n else np.empty((0, 3))
    X = np.column_stack(
        ([np.ones(n)] if cfg.intercept else []) + [table[f"x_{p}"] for p in cfg.predictors]
    ) if n else np.empty((0, len(cfg.column_names)))
    y = table["y"] if require_y else np.zeros(n)
    if require_y and not np.all(y == np.round(y)):
        raise ConfigError(f"{source}: y must be integer counts")
    trials = table["trials"] if cfg.family == Family.BINOMIAL.value else None
    fam = FamilySpec(cfg.family, trials=trials, n=n)
    return Dataset(coords, y.astype(np.int64), fam, X, cfg.varying_indices, cfg.column_names)


def dataset_to_rows(data: Dataset, predictor_names=None) -> dict:
    """Columns for :func:`write_table`; the intercept column is omitted."""
    names = data.names or tuple(f"x{j}" for j in range(data.p))
    cols = {"s1": data.coords[:, 0], "s2": data.coords[:, 1], "t": data.coords[:, 2], "y": data.y}
    if data.family.kind is Family.BINOMIAL:
        cols["trials"] = data.family.trials
    for j, name in enumerate(names):
        if name == INTERCEPT:
            continue
        cols[f"x_{name}"] = data.X[:, j]
    return cols


def write_json(path, obj):
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def model_from_dict(d: dict) -> CandidateModel:
    def kernel(kd):
        kd = dict(kd)
        kind = kd.pop("type")
        return {"SpaceTimeKernel": kern.SpaceTimeKernel, "MaternKernel": kern.MaternKernel}[kind](**kd)

    k = d["kernel"]
    k = tuple(kernel(x) for x in k) if isinstance(k, list) else kernel(k)
    return CandidateModel(d["alpha_eps"], d["kappa_eps"], d["sigma_xi"], k)


def save_sample(directory, sample: PosteriorSample, names):
    """Write ``beta.csv``, ``z.csv`` (process-major ``z<j>_<i>``) and ``sigma.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    N, n, r = sample.z.shape
    write_table(d / "beta.csv", {f"beta_{nm}": sample.beta[:, j] for j, nm in enumerate(names)})
    zcols = {f"z{j}_{i}": sample.z[:, i, j] for j in range(r) for i in range(n)}
    write_table(d / "z.csv", zcols)
    sig = {"sigma2_beta": sample.sigma2_beta}
    sig.update({f"sigma2_z{j}": sample.sigma2_z[:, j] for j in range(r)})
    write_table(d / "sigma.csv", sig)


def load_sample(directory, n, r) -> PosteriorSample:
    d = Path(directory)
    beta_t = read_table(d / "beta.csv")
    beta = np.column_stack(list(beta_t.values()))
    z_t = read_table(d / "z.csv")
    N = len(beta)
    z = np.empty((N, n, r))
    for j in range(r):
        for i in range(n):
            z[:, i, j] = z_t[f"z{j}_{i}"]
    s = read_table(d / "sigma.csv")
    s2z = np.column_stack([s[f"sigma2_z{j}"] for j in range(r)])
    return PosteriorSample(beta, z, np.full((N, n), np.nan), s["sigma2_beta"], s2z, np.full((N, n), np.nan))


def weights_document(models, weights: StackingWeights) -> dict:
    return {
        "models": [
            {"index": l, "weight": float(weights.w[l]), **m.describe()} for l, m in enumerate(models)
        ],
        "objective": weights.objective,
        "iterations": weights.iterations,
        "converged": weights.converged,
        "method": weights.method,
    }
