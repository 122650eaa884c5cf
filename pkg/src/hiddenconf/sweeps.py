"""Monte-Carlo sweeps over simulation grids, written as tidy and aggregated CSV."""

from __future__ import annotations

import csv
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .data_io import (
    CovariateTable,
    SemiSynthSpec,
    bundled_covariate_table,
    estimate_env_ate_bias,
    generate_semi_synthetic,
)
from .detector import DetectorConfig, detect, jci_baseline
from .errors import ConfigurationError
from .scm import BinaryScmSpec, GaussScmSpec, sample_binary_scm, sample_gauss_scm

SWEEP_KINDS = ("confounding-grid", "env-sample-grid", "jci-comparison",
               "faithfulness-grid", "semi-synth-grid")

DEFAULT_TEST = {
    "confounding-grid": "g_test",
    "env-sample-grid": "g_test",
    "jci-comparison": "g_test",
    "faithfulness-grid": "partial_corr",
    "semi-synth-grid": "kci",
}


@dataclass
class SweepConfig:
    kind: str
    reps: int = 100
    alpha: float = 0.05
    test: str | None = None
    seed: int = 0
    k_min: int = 25
    max_rounds: int | None = None
    n_perm: int = 999
    lambdas: list[float] = field(default_factory=lambda: [0.0, 2.0, 5.0, 10.0])
    Ks: list[int] = field(default_factory=lambda: [50, 200, 500])
    Ns: list[int] = field(default_factory=lambda: [2])
    sigma_theta_y: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.25])
    sigma_theta_t: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    sigma_theta_u: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    sigma_t: float = 2.0 / 3.0
    sigma_u: float = 1.0
    ps: list[int] = field(default_factory=lambda: [5])
    n_observed: list[int] = field(default_factory=lambda: [0])
    covariates: CovariateTable | None = None

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ConfigurationError(f"unknown sweep kind {self.kind!r}; choose from {SWEEP_KINDS}")
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if self.test is None:
            self.test = DEFAULT_TEST[self.kind]
        for name, axis in self.axes().items():
            if not axis:
                raise ConfigurationError(f"grid axis {name} is empty")

    def axes(self) -> dict[str, list]:
        k = self.kind
        if k == "confounding-grid":
            return {"lambda": self.lambdas, "K": self.Ks, "N": self.Ns}
        if k == "env-sample-grid":
            return {"lambda": self.lambdas, "K": self.Ks, "N": self.Ns}
        if k == "jci-comparison":
            return {"lambda": self.lambdas, "sigma_theta_y": self.sigma_theta_y, "K": self.Ks, "N": self.Ns}
        if k == "faithfulness-grid":
            return {"sigma_theta_t": self.sigma_theta_t, "sigma_theta_u": self.sigma_theta_u,
                    "K": self.Ks, "N": self.Ns}
        return {"lambda": self.lambdas, "p": self.ps, "n_observed": self.n_observed}

    def cells(self) -> list[dict]:
        axes = self.axes()
        cells = [dict(zip(axes, combo)) for combo in itertools.product(*axes.values())]
        if self.kind == "faithfulness-grid":
            cells = [c for c in cells if c["sigma_theta_t"] > 0 or c["sigma_theta_u"] > 0]
        if self.kind == "semi-synth-grid":
            cells = [c for c in cells if c["n_observed"] <= c["p"]]
        return cells

    def detector_config(self, seed: int) -> DetectorConfig:
        return DetectorConfig(alpha=self.alpha, k_min=self.k_min, test=self.test,
                              max_rounds=self.max_rounds, seed=seed, n_perm=self.n_perm)


def cell_seed(master: int, cell: int, rep: int) -> int:
    """Seed of one (cell, repetition), reproducible without running the rest of the grid."""
    return int(np.random.SeedSequence([int(master), int(cell), int(rep)]).generate_state(1)[0])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def run_one(config: SweepConfig, cell_index: int, cell: dict, rep: int) -> dict:
    """One repetition of one grid cell; returns a tidy row (plus private ``_wall``)."""
    seed = cell_seed(config.seed, cell_index, rep)
    det = config.detector_config(seed)
    start = time.perf_counter()
    row = {"cell": cell_index, "rep": rep, **cell, "seed": seed, "test": config.test}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if config.kind in ("confounding-grid", "env-sample-grid", "jci-comparison"):
            spec = BinaryScmSpec(lam=cell["lambda"], sigma_theta_y=cell.get("sigma_theta_y", 1.0))
            data = sample_binary_scm(spec, cell["K"], cell["N"], seed)
        elif config.kind == "faithfulness-grid":
            spec = GaussScmSpec(sigma_t=config.sigma_t, sigma_u=config.sigma_u,
                                sigma_theta_t=cell["sigma_theta_t"], sigma_theta_u=cell["sigma_theta_u"])
            data = sample_gauss_scm(spec, cell["K"], cell["N"], seed)
        else:
            cov = config.covariates if config.covariates is not None else bundled_covariate_table()
            sspec = SemiSynthSpec(p=cell["p"], n_observed=cell["n_observed"], lam=cell["lambda"], seed=seed)
            data, trace = generate_semi_synthetic(cov, sspec)
            row["ate_bias"] = estimate_env_ate_bias(data, trace)
        report = detect(data, det)
        row.update(global_p=report.global_p, rejected=report.rejected,
                   fisher_z=report.fisher_statistic, rounds=report.rounds_used)
        if config.kind == "jci-comparison":
            jci_cfg = det if config.test != "kci" else config.detector_config(seed)
            res = jci_baseline(data, jci_cfg)
            row.update(jci_p=res.p_value, jci_rejected=res.p_value <= config.alpha)
    row["_wall"] = time.perf_counter() - start
    return row


def _run_packed(args):
    return run_one(*args)


def iter_rows(config: SweepConfig, workers: int = 1) -> Iterator[dict]:
    """Rows in (cell, rep) order regardless of worker scheduling."""
    jobs = [(config, ci, cell, rep) for ci, cell in enumerate(config.cells()) for rep in range(config.reps)]
    if workers <= 1:
        for job in jobs:
            yield run_one(*job)
        return
    with Pool(workers) as pool:
        yield from pool.imap(_run_packed, jobs)


def tidy_columns(config: SweepConfig) -> list[str]:
    cols = ["cell", "rep", *config.axes(), "seed", "test", "global_p", "rejected", "fisher_z", "rounds"]
    if config.kind == "jci-comparison":
        cols += ["jci_p", "jci_rejected"]
    if config.kind == "semi-synth-grid":
        cols += ["ate_bias"]
    return cols


def aggregate(rows: list[dict], config: SweepConfig) -> list[dict]:
    """Detection rate and binomial standard error per cell."""
    out = []
    by_cell: dict[int, list[dict]] = {}
    for r in rows:
        by_cell.setdefault(r["cell"], []).append(r)
    for ci, group in sorted(by_cell.items()):
        n = len(group)
        rate = sum(bool(r["rejected"]) for r in group) / n
        agg = {"cell": ci, **{a: group[0][a] for a in config.axes()}, "reps": n,
               "detection_rate": rate, "se": math.sqrt(rate * (1 - rate) / n),
               "mean_fisher_z": float(np.mean([r["fisher_z"] for r in group]))}
        if config.kind == "jci-comparison":
            jr = sum(bool(r["jci_rejected"]) for r in group) / n
            agg.update(jci_rate=jr, jci_se=math.sqrt(jr * (1 - jr) / n))
        if config.kind == "semi-synth-grid":
            agg["mean_ate_bias"] = float(np.mean([r["ate_bias"] for r in group]))
        out.append(agg)
    return out


def agg_columns(config: SweepConfig) -> list[str]:
    cols = ["cell", *config.axes(), "reps", "detection_rate", "se", "mean_fisher_z"]
    if config.kind == "jci-comparison":
        cols += ["jci_rate", "jci_se"]
    if config.kind == "semi-synth-grid":
        cols += ["mean_ate_bias"]
    return cols


def _writer(path: Path, columns: list[str]):
    fh = open(path, "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    fh.flush()
    return fh, w


def run_sweep(config: SweepConfig, out_dir, workers: int = 1,
              progress: Callable[[dict], None] | None = None) -> list[dict]:
    """Run the grid, streaming rows to ``<kind>_tidy.csv``, then write ``<kind>_agg.csv``.

    Wall times go to ``<kind>_timing.csv`` so the tidy and aggregated files
    stay byte-identical across runs with the same seed. An interrupt leaves
    the rows finished so far behind a complete header.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = config.kind
    cols = tidy_columns(config)
    rows: list[dict] = []
    tidy_fh, tidy = _writer(out_dir / f"{stem}_tidy.csv", cols)
    time_fh, timing = _writer(out_dir / f"{stem}_timing.csv", ["cell", "rep", "wall_seconds"])
    try:
        for row in iter_rows(config, workers):
            tidy.writerow([_fmt(row[c]) for c in cols])
            timing.writerow([row["cell"], row["rep"], f"{row['_wall']:.6f}"])
            tidy_fh.flush()
            time_fh.flush()
            rows.append(row)
            if progress is not None:
                progress(row)
    finally:
        tidy_fh.close()
        time_fh.close()
    acols = agg_columns(config)
    agg_fh, agg = _writer(out_dir / f"{stem}_agg.csv", acols)
    with agg_fh:
        for a in aggregate(rows, config):
            agg.writerow([_fmt(a[c]) for c in acols])
    return rows
