"""Hidden-confounder detection from multi-environment data.

Within one environment, two different observations share the environment's
mechanisms. Pairing observation ``2i-1`` ("j") with observation ``2i`` ("i")
in every environment yields one sample per environment of
``(t_j, y_i, t_i, x_i, x_j)``, on which ``t_j _||_ y_i | t_i, x_i, x_j`` is
tested. Successive pairs give independent rounds whose p-values are pooled
with Fisher's method.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import MultiEnvDataset
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    InsufficientDataError,
    UsageError,
)
from .stats import (
    CATEGORICAL,
    CiTestResult,
    KciConfig,
    SampleMatrix,
    TEST_NAMES,
    chi2_survival,
    get_test,
)

P_FLOOR = 1e-300
COVARIATES, TWO_VARIABLE = "covariates", "two-variable"


def fisher_combine(p_values: Sequence[float]) -> tuple[float, float]:
    """Fisher's method: ``z = -2 sum(ln p)`` against chi2 with ``2L`` degrees of freedom."""
    p = np.asarray(list(p_values), dtype=float)
    if p.size == 0:
        raise UsageError("fisher_combine needs at least one p-value")
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise UsageError("p-values must lie in [0, 1]")
    p = np.clip(p, P_FLOOR, 1.0)
    z = float(-2.0 * np.log(p).sum())
    z = max(z, 0.0)
    return z, chi2_survival(z, 2 * p.size)


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.05
    k_min: int = 25
    test: str = "g_test"
    theorem: str = COVARIATES
    max_rounds: int | None = None
    seed: int = 0
    n_perm: int = 999
    kci: KciConfig = field(default_factory=KciConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.k_min < 1:
            raise ConfigurationError(f"k_min must be positive, got {self.k_min}")
        if self.test not in TEST_NAMES:
            raise ConfigurationError(f"unknown test {self.test!r}")
        if self.theorem not in (COVARIATES, TWO_VARIABLE):
            raise ConfigurationError(f"theorem must be {COVARIATES!r} or {TWO_VARIABLE!r}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be positive")


@dataclass
class PairedRound:
    index: int  # 1-based round number
    env_ids: list[str]
    t_j: np.ndarray
    y_i: np.ndarray
    t_i: np.ndarray
    y_j: np.ndarray
    x_i: np.ndarray  # (n_envs, p)
    x_j: np.ndarray

    @property
    def n_envs(self) -> int:
        return len(self.env_ids)

    def sample_matrix(self, kinds: dict[str, str], x_names: Sequence[str]) -> SampleMatrix:
        cols = {"t_j": self.t_j, "y_i": self.y_i, "t_i": self.t_i, "y_j": self.y_j}
        kk = {"t_j": kinds["t"], "t_i": kinds["t"], "y_i": kinds["y"], "y_j": kinds["y"]}
        for d, name in enumerate(x_names):
            cols[f"{name}_i"] = self.x_i[:, d]
            cols[f"{name}_j"] = self.x_j[:, d]
            kk[f"{name}_i"] = kk[f"{name}_j"] = kinds[name]
        return SampleMatrix(cols, kk)


def build_rounds(data: MultiEnvDataset, k_min: int, max_rounds: int | None = None) -> list[PairedRound]:
    """Disjoint observation pairs across environments, one round per pair index.

    Round ``i`` uses observations ``2i-1`` and ``2i`` of every environment that
    has at least ``2i`` of them, and stops before the first round with fewer
    than ``k_min`` participating environments.
    """
    blocks = data.sorted_blocks()
    if not blocks:
        raise InsufficientDataError("dataset has no environments")
    l_max = math.ceil(max(b.n for b in blocks) / 2)
    if max_rounds is not None:
        l_max = min(l_max, max_rounds)
    rounds = []
    for i in range(1, l_max + 1):
        members = [b for b in blocks if b.n >= 2 * i]
        if len(members) < k_min:
            break
        j_idx, i_idx = 2 * i - 2, 2 * i - 1
        rounds.append(PairedRound(
            index=i,
            env_ids=[b.env_id for b in members],
            t_j=np.array([b.t[j_idx] for b in members]),
            y_i=np.array([b.y[i_idx] for b in members]),
            t_i=np.array([b.t[i_idx] for b in members]),
            y_j=np.array([b.y[j_idx] for b in members]),
            x_i=np.array([b.x[i_idx] for b in members]).reshape(len(members), data.p),
            x_j=np.array([b.x[j_idx] for b in members]).reshape(len(members), data.p),
        ))
    if not rounds:
        n_pairs = sum(b.n >= 2 for b in blocks)
        raise InsufficientDataError(
            f"no testing round possible: {n_pairs} environment(s) have two or more "
            f"observations, k_min={k_min}"
        )
    return rounds


@dataclass
class DetectionReport:
    round_p_values: list[float]
    round_env_counts: list[int]
    fisher_statistic: float
    global_p: float
    rejected: bool
    alpha: float
    test: str
    theorem: str = COVARIATES

    @property
    def rounds_used(self) -> int:
        return len(self.round_p_values)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "test": self.test,
            "theorem": self.theorem,
            "rounds": [
                {"i": k + 1, "n_envs": n, "p": p}
                for k, (n, p) in enumerate(zip(self.round_env_counts, self.round_p_values))
            ],
            "fisher_z": self.fisher_statistic,
            "global_p": self.global_p,
            "rejected": self.rejected,
        }


def _sample_floor(test: str, n_cond: int) -> int:
    if test == "partial_corr":
        return n_cond + 4
    if test == "kci":
        return 4
    return 2


def _check_kinds(data: MultiEnvDataset, config: DetectorConfig):
    discrete = {c: data.kinds[c] != "continuous" for c in data.column_names}
    if config.test == "g_test" and not all(discrete.values()):
        bad = [c for c, d in discrete.items() if not d]
        raise ConfigurationError(f"g_test needs discrete columns; continuous: {bad}")
    if config.test == "permutation":
        cond_cols = ["t", *data.x_names] if config.theorem == COVARIATES else ["t", "y"]
        bad = [c for c in cond_cols if not discrete[c]]
        if bad:
            raise ConfigurationError(f"permutation test conditions on discrete columns only; continuous: {bad}")


def _round_seed(seed: int, index: int) -> list[int]:
    return [int(seed), int(index)]


def run_round(rnd: PairedRound, data: MultiEnvDataset, config: DetectorConfig) -> float:
    sm = rnd.sample_matrix(data.kinds, data.x_names)
    test = get_test(config.test, n_perm=config.n_perm, seed=_round_seed(config.seed, rnd.index),
                    kci_config=config.kci)
    try:
        if config.theorem == COVARIATES:
            cond = ["t_i", *(f"{x}_i" for x in data.x_names), *(f"{x}_j" for x in data.x_names)]
            return test(sm, "t_j", "y_i", cond).p_value
        p1 = test(sm, "t_j", "y_i", ["t_i"]).p_value
        p2 = test(sm, "t_j", "y_i", ["y_j"]).p_value
        return max(p1, p2)
    except DegenerateInputError as exc:
        warnings.warn(f"round {rnd.index}: statistic undefined ({exc}); counting p = 1", stacklevel=2)
        return 1.0


def detect(data: MultiEnvDataset, config: DetectorConfig = DetectorConfig()) -> DetectionReport:
    """Test for hidden confounding between t and y; reject when the pooled p <= alpha."""
    if data.K < 2:
        raise InsufficientDataError("need observations from at least two environments")
    if config.theorem == TWO_VARIABLE and data.p > 0:
        raise ConfigurationError("two-variable mode does not take covariates; use 'covariates'")
    _check_kinds(data, config)
    n_cond = 1 + 2 * data.p if config.theorem == COVARIATES else 1
    floor = _sample_floor(config.test, n_cond)
    if config.k_min < floor:
        raise ConfigurationError(f"k_min={config.k_min} is below the {config.test} floor of {floor}")

    rounds = build_rounds(data, config.k_min, config.max_rounds)
    p_values = [run_round(r, data, config) for r in rounds]
    z, global_p = fisher_combine(p_values)
    return DetectionReport(
        round_p_values=p_values,
        round_env_counts=[r.n_envs for r in rounds],
        fisher_statistic=z,
        global_p=global_p,
        rejected=global_p <= config.alpha,
        alpha=config.alpha,
        test=config.test,
        theorem=config.theorem,
    )


# ---------------------------------------------------------------------------
# pooled baseline


def _env_lr_test(y: np.ndarray, t: np.ndarray, env: np.ndarray) -> CiTestResult:
    # Gaussian likelihood ratio for adding environment intercepts to y ~ t
    n = len(y)
    levels, codes = np.unique(env, return_inverse=True)
    base = np.column_stack([np.ones(n), t])
    full = np.column_stack([t, np.eye(len(levels))[codes]])
    rss0 = float(np.sum((y - base @ np.linalg.lstsq(base, y, rcond=None)[0]) ** 2))
    rss1 = float(np.sum((y - full @ np.linalg.lstsq(full, y, rcond=None)[0]) ** 2))
    df = len(levels) - 1
    if rss1 <= 0 or rss0 <= 0:
        raise DegenerateInputError("outcome is an exact function of treatment and environment")
    lr = max(n * math.log(rss0 / rss1), 0.0)
    return CiTestResult(chi2_survival(lr, df), lr, "partial_corr", n, df)


def jci_baseline(data: MultiEnvDataset, config: DetectorConfig = DetectorConfig()) -> CiTestResult:
    """Pooled test of ``y _||_ E | t``; only valid when E acts on t alone."""
    if data.K < 2:
        raise UsageError("the pooled baseline needs at least two environments")
    env = np.concatenate([np.full(b.n, k) for k, b in enumerate(data.sorted_blocks())])
    t = np.concatenate([b.t for b in data.sorted_blocks()])
    y = np.concatenate([b.y for b in data.sorted_blocks()])
    if config.test == "partial_corr":
        return _env_lr_test(y, t, env)
    if config.test == "kci":
        raise ConfigurationError("the pooled baseline supports g_test, permutation and partial_corr")
    sm = SampleMatrix({"y": y, "e": env, "t": t},
                      {"y": data.kinds["y"], "e": CATEGORICAL, "t": data.kinds["t"]})
    if config.test == "g_test" and (data.kinds["y"] == "continuous" or data.kinds["t"] == "continuous"):
        raise ConfigurationError("g_test baseline needs discrete t and y")
    test = get_test(config.test, n_perm=config.n_perm, seed=[config.seed, 0])
    return test(sm, "y", "e", ["t"])
