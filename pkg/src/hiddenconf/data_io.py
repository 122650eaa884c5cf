"""CSV ingestion and the covariate-driven semi-synthetic generator.

Dataset CSV: header ``env,t,y[,x1,...,xp]``, one observation per row.
Covariate CSV: header ``env,c_1,...,c_m`` (any column names after ``env``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import EnvBlock, MultiEnvDataset
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    InsufficientDataError,
    ParseError,
    UsageError,
)
from .stats import CONTINUOUS

FUNCTIONS = {"tanh": np.tanh, "identity": lambda v: v, "square": np.square}
FUNCTION_NAMES = tuple(FUNCTIONS)
NOISE_SD = 0.5  # variance 1/4


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _read_rows(path_or_text, first_col: str) -> tuple[list[str], list[list[str]]]:
    if isinstance(path_or_text, (str, Path)) and "\n" not in str(path_or_text):
        with open(path_or_text, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(io.StringIO(str(path_or_text))))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != first_col:
        raise ParseError(f"header must start with {first_col!r}, got {header[:1]}")
    return header, rows[1:]


def _parse_numeric(header: list[str], body: list[list[str]]) -> tuple[list[str], np.ndarray]:
    envs, values = [], np.empty((len(body), len(header) - 1))
    for r, row in enumerate(body):
        line = r + 2  # 1-based, after the header
        if len(row) != len(header):
            raise ParseError(f"row {line}: expected {len(header)} cells, found {len(row)}")
        if row[0].strip() == "":
            raise ParseError(f"row {line}, column 'env': missing cell")
        envs.append(row[0].strip())
        for c in range(1, len(header)):
            cell = row[c].strip()
            if cell == "":
                raise ParseError(f"row {line}, column {header[c]!r}: missing cell")
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"row {line}, column {header[c]!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"row {line}, column {header[c]!r}: non-finite value {cell!r}")
            values[r, c - 1] = v
    return envs, values


def load_multi_env_csv(path) -> MultiEnvDataset:
    header, body = _read_rows(path, "env")
    if header[1:3] != ["t", "y"]:
        raise ParseError(f"header must be env,t,y[,x1,...]; got {','.join(header)}")
    if not body:
        raise ParseError("no data rows")
    envs, values = _parse_numeric(header, body)
    data = MultiEnvDataset.from_arrays(envs, values[:, 0], values[:, 1], values[:, 2:])
    if data.K < 2:
        raise UsageError("the dataset has a single environment; at least two are needed")
    return data


def dataset_to_csv(data: MultiEnvDataset) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["env", "t", "y", *data.x_names])
    for b in data.blocks:
        for r in range(b.n):
            w.writerow([b.env_id, _fmt(b.t[r]), _fmt(b.y[r]), *(_fmt(v) for v in b.x[r])])
    return out.getvalue()


def write_multi_env_csv(data: MultiEnvDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data), encoding="utf-8")


# ---------------------------------------------------------------------------
# covariate tables


@dataclass
class CovariateTable:
    env: list[str]
    names: list[str]
    values: np.ndarray  # (n, m)
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.env), -1)
        if len(set(self.env)) < 2:
            raise UsageError("a covariate table needs at least two environments")
        if self.values.shape[1] != len(self.names):
            raise UsageError("column names do not match the value matrix")
        if self.values.shape[1] and np.any(self.values.var(axis=0) <= 0):
            bad = [n for n, v in zip(self.names, self.values.var(axis=0)) if v <= 0]
            raise DegenerateInputError(f"constant covariate columns: {bad}")

    @property
    def m(self) -> int:
        return len(self.names)

    def summary(self) -> dict[str, dict[str, float]]:
        v = self.values
        return {n: {"mean": float(v[:, d].mean()), "min": float(v[:, d].min()),
                    "max": float(v[:, d].max()), "variance": float(v[:, d].var())}
                for d, n in enumerate(self.names)}

    @classmethod
    def from_columns(cls, env: Sequence, columns: dict[str, Sequence[float]],
                     min_variance: float = 0.0) -> "CovariateTable":
        names = list(columns)
        values = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        return _filter(cls, [str(e) for e in env], names, values, min_variance)


def _filter(cls, env, names, values, min_variance):
    var = values.var(axis=0)
    # keep columns whose variance is positive and at least min_variance
    keep = (var > 0) & (var >= min_variance)
    dropped = [n for n, k in zip(names, keep) if not k]
    if not keep.any():
        raise DegenerateInputError("no covariate column passes the variance filter")
    return cls(env, [n for n, k in zip(names, keep) if k], values[:, keep], dropped)


def load_covariate_table(path, min_variance: float = 0.0) -> CovariateTable:
    """Read ``env,c_1,...`` and drop columns with zero variance or variance below ``min_variance``."""
    header, body = _read_rows(path, "env")
    if len(header) < 2:
        raise ParseError("covariate table has no covariate columns")
    if not body:
        raise ParseError("no data rows")
    envs, values = _parse_numeric(header, body)
    return _filter(CovariateTable, envs, header[1:], values, min_variance)


def covariate_table_to_csv(table: CovariateTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["env", *table.names])
    for e, row in zip(table.env, table.values):
        w.writerow([e, *(_fmt(v) for v in row)])
    return out.getvalue()


def synthetic_covariate_table(n_envs: int = 200, n_per_env: int = 100, n_cols: int = 8,
                              shift_scale: float = 1.0, seed: int = 2024) -> CovariateTable:
    """Integer-valued covariates whose distributions shift between environments.

    Each column has its own base level, within-environment spread and a
    per-environment offset comparable to that spread, so that environments
    differ only through their covariate distributions.
    """
    rng = np.random.default_rng([seed, 0])
    base = rng.uniform(2.0, 30.0, n_cols)
    spread = rng.uniform(1.5, 6.0, n_cols)
    env_ids, cols = [], []
    for k in range(n_envs):
        erng = np.random.default_rng([seed, k + 1])
        shift = erng.normal(0.0, shift_scale, n_cols) * spread
        skew = erng.uniform(0.5, 2.0, n_cols)
        # gamma-shaped noise keeps the columns non-Gaussian
        noise = erng.gamma(skew, 1.0, (n_per_env, n_cols)) - skew
        block = np.rint(base + shift + noise * spread / np.sqrt(skew))
        env_ids += [f"s{k + 1:02d}"] * n_per_env
        cols.append(block)
    names = [f"c_{d + 1}" for d in range(n_cols)]
    return CovariateTable(env_ids, names, np.vstack(cols))


def bundled_covariate_table(min_variance: float = 0.0) -> CovariateTable:
    """The shipped synthetic covariate table (200 environments, 8 columns)."""
    text = resources.files("hiddenconf").joinpath("data/synthetic_covariates.csv").read_text("utf-8")
    return load_covariate_table(text, min_variance)


# ---------------------------------------------------------------------------
# semi-synthetic generation


def scale_covariate(column) -> np.ndarray:
    """``5 (x - mean) / (max - min)`` with statistics over the whole column."""
    x = np.asarray(column, dtype=float)
    span = float(x.max() - x.min()) if x.size else 0.0
    if span <= 0:
        raise DegenerateInputError("cannot scale a constant column")
    return 5.0 * (x - x.mean()) / span


@dataclass(frozen=True)
class SemiSynthSpec:
    p: int = 5
    n_observed: int = 0
    lam: float = 1.0
    seed: int = 0
    coef_range: tuple[float, float] = (1.0, 5.0)
    delta_range: tuple[float, float] = (1.0, 2.0)
    functions: tuple[str, ...] = FUNCTION_NAMES

    def __post_init__(self):
        if self.p < 1:
            raise ConfigurationError(f"p must be >= 1, got {self.p}")
        if not 0 <= self.n_observed <= self.p:
            raise ConfigurationError(f"n_observed must lie in [0, p={self.p}], got {self.n_observed}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        bad = [f for f in self.functions if f not in FUNCTIONS]
        if bad or not self.functions:
            raise ConfigurationError(f"functions must be drawn from {FUNCTION_NAMES}, got {self.functions}")


@dataclass
class GenerationTrace:
    covariates: list[str]
    alphas: list[float]
    betas: list[float]
    funcs_f: list[str]
    funcs_g: list[str]
    delta: float
    lam: float
    observed_ids: list[str]
    seed: int

    @property
    def unobserved_ids(self) -> list[str]:
        return [c for c in self.covariates if c not in self.observed_ids]

    def to_json(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def generate_semi_synthetic(cov: CovariateTable, spec: SemiSynthSpec) -> tuple[MultiEnvDataset, GenerationTrace]:
    """Continuous t and y driven by randomly chosen covariates.

    ``t = sum_d alpha_d f_d(x_d) + eps_t`` and ``y = sum_d b_d g_d(x_d) + delta t + eps_y``
    where ``b_d = beta_d`` for exported covariates and ``lambda * beta_d`` for
    withheld ones.
    """
    if spec.p > cov.m:
        raise ConfigurationError(f"p={spec.p} exceeds the {cov.m} available covariates")
    rng = np.random.default_rng([spec.seed, 0])
    chosen = rng.choice(cov.m, size=spec.p, replace=False).tolist()
    lo, hi = spec.coef_range
    alphas = rng.uniform(lo, hi, spec.p)
    betas = rng.uniform(lo, hi, spec.p)
    f_idx = rng.integers(0, len(spec.functions), spec.p)
    g_idx = rng.integers(0, len(spec.functions), spec.p)
    delta = float(rng.uniform(*spec.delta_range))
    names = [cov.names[c] for c in chosen]
    funcs_f = [spec.functions[i] for i in f_idx]
    funcs_g = [spec.functions[i] for i in g_idx]

    scaled = np.column_stack([scale_covariate(cov.values[:, c]) for c in chosen])
    observed = np.arange(spec.p) < spec.n_observed
    b_eff = np.where(observed, betas, spec.lam * betas)
    t_mean = sum(alphas[d] * FUNCTIONS[funcs_f[d]](scaled[:, d]) for d in range(spec.p))
    y_cov = sum(b_eff[d] * FUNCTIONS[funcs_g[d]](scaled[:, d]) for d in range(spec.p))

    order: dict[str, list[int]] = {}
    for r, e in enumerate(cov.env):
        order.setdefault(e, []).append(r)
    blocks = []
    for k, (e, rows) in enumerate(order.items()):
        erng = np.random.default_rng([spec.seed, k + 1])
        idx = np.asarray(rows)
        eps_t, eps_y = erng.standard_normal((2, len(idx))) * NOISE_SD
        t = t_mean[idx] + eps_t
        y = y_cov[idx] + delta * t + eps_y
        blocks.append(EnvBlock(e, t, y, scaled[np.ix_(idx, np.flatnonzero(observed))]))
    kinds = {"t": CONTINUOUS, "y": CONTINUOUS, **{f"x{d + 1}": CONTINUOUS for d in range(spec.n_observed)}}
    data = MultiEnvDataset(blocks, kinds)
    trace = GenerationTrace(
        covariates=names,
        alphas=alphas.tolist(),
        betas=betas.tolist(),
        funcs_f=funcs_f,
        funcs_g=funcs_g,
        delta=delta,
        lam=spec.lam,
        observed_ids=names[: spec.n_observed],
        seed=spec.seed,
    )
    data.ground_truth = {"trace": trace.to_json()}
    return data, trace


def estimate_env_ate_bias(data: MultiEnvDataset, trace: GenerationTrace) -> float:
    """Average over environments of the OLS t-coefficient (adjusting for observed x) minus delta."""
    biases, skipped = [], []
    n_reg = 2 + data.p  # intercept, t, observed covariates
    for b in data.sorted_blocks():
        if b.n <= data.p + 2:
            skipped.append(b.env_id)
            continue
        design = np.column_stack([np.ones(b.n), b.t, b.x])
        coef, _, rank, _ = np.linalg.lstsq(design, b.y, rcond=None)
        if rank < n_reg:
            skipped.append(b.env_id)
            continue
        biases.append(coef[1] - trace.delta)
    if skipped:
        warnings.warn(f"excluded {len(skipped)} environment(s) with too few observations "
                      f"or a rank-deficient design: {skipped[:5]}", stacklevel=2)
    if not biases:
        raise InsufficientDataError("no environment supports the per-environment regression")
    return float(np.mean(biases))
