"""Command-line entry point: ``hiddenconf <subcommand> [options]``.

Exit codes: 0 success (and no rejection for ``detect``), 10 rejection in
``detect``, 1 golden-table mismatch, 2 usage error, 3 data error,
4 numerical error, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import tables
from .data_io import (
    bundled_covariate_table,
    dataset_to_csv,
    generate_semi_synthetic,
    load_covariate_table,
    load_multi_env_csv,
    SemiSynthSpec,
)
from .detector import COVARIATES, TWO_VARIABLE, DetectorConfig, detect, jci_baseline
from .errors import DataError, HiddenConfError, UsageError
from .graph import check_selection_bias_example
from .scm import GaussScmSpec, sample_binary_scm, sample_gauss_scm, spec_from_json
from .stats import TEST_NAMES
from .sweeps import SWEEP_KINDS, SweepConfig, run_sweep

EXIT_REJECTED = 10
EXIT_MISMATCH = 1
EXIT_INTERRUPTED = 130


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    g.add_argument("--alpha", type=float, default=argparse.SUPPRESS, help="significance level (default 0.05)")
    g.add_argument("--test", choices=TEST_NAMES, default=argparse.SUPPRESS, help="conditional independence test")
    g.add_argument("--k-min", type=int, default=argparse.SUPPRESS, dest="k_min",
                   help="minimum environments per round (default 25)")
    return g


GLOBAL_DEFAULTS = {"seed": 0, "out": None, "workers": 1, "alpha": 0.05, "test": None, "k_min": 25}


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    p = _Parser(prog="hiddenconf", description="Detect hidden confounding from multi-environment data.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify-tables", parents=[common], help="recompute the d-separation tables")
    v.add_argument("--golden-dir", help="directory with table1.csv..table3.csv to compare against")

    s = sub.add_parser("simulate", parents=[common], help="sample a synthetic dataset")
    s.add_argument("--spec", required=True, help="JSON file or inline JSON with a 'model' key")
    s.add_argument("-K", type=int, required=True, help="number of environments")
    s.add_argument("-N", type=int, required=True, help="observations per environment")
    s.add_argument("--degenerate", default="", help="comma-separated mechanisms fixed across environments (gaussian)")

    d = sub.add_parser("detect", parents=[common], help="run the confounding test on a dataset CSV")
    d.add_argument("data", help="CSV with header env,t,y[,x1,...]")
    d.add_argument("--theorem", choices=(COVARIATES, TWO_VARIABLE), default=COVARIATES)
    d.add_argument("--max-rounds", type=int, default=None)
    d.add_argument("--n-perm", type=int, default=999)
    d.add_argument("--jci", action="store_true", help="also report the pooled y _||_ env | t baseline")

    w = sub.add_parser("sweep", parents=[common], help="Monte-Carlo grid over simulation settings")
    w.add_argument("kind", choices=SWEEP_KINDS)
    w.add_argument("--reps", type=int, default=100)
    w.add_argument("--lambdas", type=_floats, default=None)
    w.add_argument("--Ks", type=_ints, default=None)
    w.add_argument("--Ns", type=_ints, default=None)
    w.add_argument("--sigma-theta-y", type=_floats, default=None)
    w.add_argument("--sigma-theta-t", type=_floats, default=None)
    w.add_argument("--sigma-theta-u", type=_floats, default=None)
    w.add_argument("--sigma-t", type=float, default=2.0 / 3.0)
    w.add_argument("--sigma-u", type=float, default=1.0)
    w.add_argument("--ps", type=_ints, default=None, help="covariates drawn into the SCM (semi-synth-grid)")
    w.add_argument("--n-observed", type=_ints, default=None)
    w.add_argument("--covariates", help="covariate CSV env,c_1,... (default: bundled table)")
    w.add_argument("--min-variance", type=float, default=0.0)
    w.add_argument("--max-rounds", type=int, default=None)
    w.add_argument("--n-perm", type=int, default=999)

    m = sub.add_parser("semi-synth", parents=[common], help="generate a semi-synthetic dataset from covariates")
    m.add_argument("--covariates", help="covariate CSV env,c_1,... (default: bundled table)")
    m.add_argument("--min-variance", type=float, default=0.0,
                   help="drop covariates whose variance is below this value")
    m.add_argument("-p", type=int, default=5)
    m.add_argument("--n-observed", type=int, default=0)
    m.add_argument("--lambda", type=float, default=1.0, dest="lam")
    m.add_argument("--trace", help="where to write the generation trace JSON (default <out>.trace.json)")
    return p


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_verify_tables(args) -> int:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    problems = []
    for name in ("table1", "table2", "table3"):
        rows = tables.table_rows(name)
        (out_dir / f"{name}.csv").write_text(tables.to_csv(name, rows), encoding="utf-8")
        golden = Path(args.golden_dir) / f"{name}.csv" if args.golden_dir else None
        problems += tables.compare(name, rows, golden)
        print(f"{name}: {len(rows)} rows -> {out_dir / (name + '.csv')}")
    free, fixed = check_selection_bias_example(confounded=False)
    print(f"selection collider, no confounder: dsep with Theta_C random={free}, degenerate={fixed}")
    for line in problems:
        print(f"MISMATCH {line}", file=sys.stderr)
    if problems:
        return EXIT_MISMATCH
    print("all tables match the golden copies")
    return 0


def _load_spec(text: str):
    path = Path(text)
    raw = path.read_text(encoding="utf-8") if not text.lstrip().startswith("{") and path.exists() else text
    try:
        return spec_from_json(json.loads(raw))
    except json.JSONDecodeError as exc:
        raise UsageError(f"--spec is neither a readable file nor valid JSON: {exc}") from None


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    degenerate = [v for v in args.degenerate.split(",") if v.strip()]
    if isinstance(spec, GaussScmSpec):
        data = sample_gauss_scm(spec, args.K, args.N, args.seed, degenerate=degenerate)
    else:
        if degenerate:
            raise UsageError("--degenerate applies to the gaussian model only")
        data = sample_binary_scm(spec, args.K, args.N, args.seed)
    _emit(dataset_to_csv(data), args.out)
    return 0


def cmd_detect(args) -> int:
    data = load_multi_env_csv(args.data)
    test = args.test or ("g_test" if all(data.kinds[c] != "continuous" for c in data.column_names)
                         else "partial_corr")
    config = DetectorConfig(alpha=args.alpha, k_min=args.k_min, test=test, theorem=args.theorem,
                            max_rounds=args.max_rounds, seed=args.seed, n_perm=args.n_perm)
    report = detect(data, config)
    payload = report.to_json()
    if args.jci:
        res = jci_baseline(data, config)
        payload["jci"] = {"p": res.p_value, "statistic": res.statistic, "rejected": res.p_value <= args.alpha}
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return EXIT_REJECTED if report.rejected else 0


def _covariates(args):
    if args.covariates:
        return load_covariate_table(args.covariates, args.min_variance)
    return bundled_covariate_table(args.min_variance)


def cmd_sweep(args) -> int:
    opts = dict(kind=args.kind, reps=args.reps, alpha=args.alpha, test=args.test, seed=args.seed,
                k_min=args.k_min, max_rounds=args.max_rounds, n_perm=args.n_perm,
                sigma_t=args.sigma_t, sigma_u=args.sigma_u)
    grid = {"lambdas": args.lambdas, "Ks": args.Ks, "Ns": args.Ns, "sigma_theta_y": args.sigma_theta_y,
            "sigma_theta_t": args.sigma_theta_t, "sigma_theta_u": args.sigma_theta_u,
            "ps": args.ps, "n_observed": args.n_observed}
    # kind-specific defaults unless overridden
    presets = {
        "env-sample-grid": {"lambdas": [5.0], "Ks": [25, 50, 100], "Ns": [2, 10, 50]},
        "jci-comparison": {"lambdas": [0.0], "Ks": [500], "Ns": [100]},
        "faithfulness-grid": {"Ks": [1000]},
        "semi-synth-grid": {"lambdas": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0], "ps": [5], "n_observed": [0]},
    }
    for key, val in {**presets.get(args.kind, {}), **{k: v for k, v in grid.items() if v is not None}}.items():
        opts[key] = val
    config = SweepConfig(**opts)
    if args.kind == "semi-synth-grid":
        config.covariates = _covariates(args)
    out_dir = Path(args.out or ".")
    total = len(config.cells()) * config.reps
    done = [0]

    def progress(_row):
        done[0] += 1
        if done[0] % max(1, total // 20) == 0 or done[0] == total:
            print(f"{done[0]}/{total} rows", file=sys.stderr)

    run_sweep(config, out_dir, workers=args.workers, progress=progress)
    print(f"wrote {out_dir / (args.kind + '_tidy.csv')} and {out_dir / (args.kind + '_agg.csv')}")
    return 0


def cmd_semi_synth(args) -> int:
    cov = _covariates(args)
    spec = SemiSynthSpec(p=args.p, n_observed=args.n_observed, lam=args.lam, seed=args.seed)
    data, trace = generate_semi_synthetic(cov, spec)
    _emit(dataset_to_csv(data), args.out)
    trace_path = args.trace or (f"{args.out}.trace.json" if args.out else None)
    if trace_path:
        Path(trace_path).write_text(trace.dumps() + "\n", encoding="utf-8")
    else:
        print(trace.dumps(), file=sys.stderr)
    return 0


COMMANDS = {
    "verify-tables": cmd_verify_tables,
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "semi-synth": cmd_semi_synth,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for key, val in GLOBAL_DEFAULTS.items():
            if not hasattr(args, key):
                setattr(args, key, val)
        return COMMANDS[args.command](args)
    except HiddenConfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
