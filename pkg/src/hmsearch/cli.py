"""``hmsearch`` command line.

Exit codes: 0 ok, 1 other error, 2 unreadable or malformed input, 3 degenerate
data (constant activations, all-tied RDM), 4 stimulus id mismatch, 5 unknown
column. Outputs are written to temporary files and renamed into place, so a
failed command never leaves partial files behind. Every command that writes
files also writes a JSON run manifest next to them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import io as fio
from .earlystop import format_savings, retention_quality, savings_analysis
from .errors import FormatError, HmsError
from .evaluation import matching_accuracy, next_frame_mse
from .rsa import POOLING_MODES, average_rdms, build_rdm, hms, temporal_pool
from .search import HyperparameterSample, HyperparameterSpace, run_search
from .stats import (
    MetricTable,
    correlation_matrix,
    format_correlation_table,
    format_summary,
    partial_correlation_matrix,
    summarize,
)

CONFIG_ENV = "HMSEARCH_CONFIG"

FORMATS_HELP = """\
file formats (numbers are written with 17 significant digits):
  RDM          line 1 'rdm,v1,m=<m>', line 2 comma-separated stimulus ids,
               line 3 the m(m-1)/2 upper-triangle entries, row-major
  activations  CSV 'stimulus_id,f1,...,fn', one row per stimulus; a sequence
               is a directory of such CSVs ordered by the number in each name
  metric table CSV 'model_id,<column>,...'
  trajectory   CSV 'epoch,hms,accuracy,mse'; empty cell = missing checkpoint
  trials       CSV 'trial,role,index,is_true,f1,...' (role probe|gallery)
  frames       PGM (P2/P5) or a CSV grid of intensities
exit codes: 2 parse error, 3 degenerate data, 4 stimulus mismatch,
  5 unknown column, 1 anything else
"""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Run:
    """Collects manifest fields while a command runs."""

    def __init__(self, argv: list[str]):
        self.manifest = fio.RunManifest(
            command="hmsearch " + " ".join(argv), tool_version=__version__, started=_now()
        )

    def finish(self, path, outputs) -> Path:
        self.manifest.outputs = sorted(str(p) for p in outputs)
        self.manifest.finished = _now()
        return fio.write_manifest(path, self.manifest)


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# rdm / hms


def _read_activation_source(path: Path, pooling: str):
    if path.is_dir():
        return temporal_pool(fio.read_activation_sequence(path), pooling)
    return fio.read_activations(path)


def cmd_rdm_build(args, run: _Run) -> int:
    src = Path(args.activations)
    acts = _read_activation_source(src, args.pooling)
    r = build_rdm(acts)
    out = Path(args.out)
    fio.write_rdm(out, r)
    run.manifest.inputs = {"activations": str(src)}
    run.manifest.extra = {"pooling": args.pooling if src.is_dir() else None}
    run.finish(_manifest_for(out), [out])
    print(f"m={r.m} entries={r.entries.size}")
    return 0


def cmd_rdm_average(args, run: _Run) -> int:
    rs = [fio.read_rdm(p) for p in args.rdms]
    r = average_rdms(rs)
    out = Path(args.out)
    fio.write_rdm(out, r)
    run.manifest.inputs = {f"rdm{i}": str(p) for i, p in enumerate(args.rdms)}
    run.finish(_manifest_for(out), [out])
    print(f"m={r.m} entries={r.entries.size} averaged={len(rs)}")
    return 0


def cmd_hms(args, run: _Run) -> int:
    a = fio.read_rdm(args.rdm_a)
    b = fio.read_rdm(args.rdm_b)
    print(f"{hms(a, b):.6f}")
    return 0


# ---------------------------------------------------------------------------
# search


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"config {path}: {exc}") from None


def _resolve_path(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def prepare_search(config: dict, base: Path):
    """Space, environment and run settings from a parsed config dict."""
    from .toy import ToyBackend, build_environment

    backend = config.get("backend", "toy")
    if backend != "toy":
        raise ValueError(f"unknown backend {backend!r}; only 'toy' is built in")
    stimuli_path = _resolve_path(base, config.get("stimuli"))
    ref_path = _resolve_path(base, config.get("reference_rdm"))
    toy = dict(config.get("toy", {}))
    env = build_environment(
        seed=int(config.get("environment_seed", 0)),
        stimuli_override=fio.read_stimuli(stimuli_path) if stimuli_path else None,
        reference_override=fio.read_rdm(ref_path) if ref_path else None,
        pooling=config.get("pooling", "mean"),
        **toy,
    )
    fixed = config.get("fixed_sample")
    return {
        "space": HyperparameterSpace.from_dict(config.get("space")),
        "suite": env.suite,
        "factory": ToyBackend,
        "n_models": int(config.get("n_models", 50)),
        "master_seed": int(config.get("master_seed", 0)),
        "checkpoint_every": int(config.get("checkpoint_every", 5)),
        "workers": int(config.get("workers", 1)),
        "fixed_sample": HyperparameterSample(**fixed) if fixed else None,
        "inputs": {k: str(v) for k, v in (("stimuli", stimuli_path), ("reference_rdm", ref_path)) if v},
    }


def cmd_search_run(args, run: _Run) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if not config_path:
        raise FormatError(f"no config given (use --config or set {CONFIG_ENV})")
    config = load_config(config_path)
    if args.seed is not None:
        config["master_seed"] = args.seed
    if args.workers is not None:
        config["workers"] = args.workers
    setup = prepare_search(config, Path(config_path).resolve().parent)
    table, records = run_search(
        setup["space"],
        setup["factory"],
        setup["n_models"],
        setup["suite"],
        master_seed=setup["master_seed"],
        checkpoint_every=setup["checkpoint_every"],
        workers=setup["workers"],
        fixed_sample=setup["fixed_sample"],
    )
    out = Path(args.out)
    failed = [r for r in records if r.failed]
    run.manifest.config_hash = fio.config_hash(config)
    run.manifest.master_seed = setup["master_seed"]
    run.manifest.inputs = {"config": str(config_path), **setup["inputs"]}
    run.manifest.extra = {"config": config, "n_models": setup["n_models"], "failed": len(failed)}
    with fio.staged_dir(out) as stage:
        files = [fio.write_metric_table(stage / "metrics.csv", table)]
        files += fio.write_trajectory_dir(stage / "trajectories", records)
        failures = [["model_id", "error"]] + [[r.model_id, r.error or ""] for r in failed]
        files.append(fio.atomic_write_text(stage / "failures.csv", fio._csv_text(failures)))
        samples = {r.model_id: r.sample.to_dict() for r in records if r.sample is not None}
        files.append(fio.atomic_write_text(stage / "samples.json", json.dumps(samples, indent=2, sort_keys=True) + "\n"))
        run.finish(stage / "manifest.json", [out / f.relative_to(stage) for f in files])
    print(f"models={len(records)} ok={len(table)} failed={len(failed)} out={out}")
    return 0


# ---------------------------------------------------------------------------
# reports


def _columns(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def cmd_report_correlations(args, run: _Run) -> int:
    table = fio.read_metric_table(args.table)
    cols = _columns(args.columns)
    if args.control:
        report = partial_correlation_matrix(table, cols, args.control)
    else:
        report = correlation_matrix(table, cols)
    text = format_correlation_table(report, args.alpha)
    summary_cols = list(dict.fromkeys(cols + ([args.control] if args.control else [])))
    summary = None
    if args.rank_by in table.columns:
        keep = list(dict.fromkeys(summary_cols + [args.rank_by]))
        sub = MetricTable(table.model_ids, {c: table.column(c) for c in keep})
        summary = summarize(sub, args.rank_by, min(args.top_k, len(table)))
    sys.stdout.write(text)
    if summary is not None:
        sys.stdout.write("\n" + format_summary(summary))
    if args.out:
        out = Path(args.out)
        run.manifest.inputs = {"table": str(args.table)}
        run.manifest.extra = {"columns": cols, "control": args.control, "alpha": args.alpha,
                              "n": report.n, "bonferroni_k": report.k, "p_value_method": report.method}
        with fio.staged_dir(out) as stage:
            files = [
                fio.atomic_write_text(stage / "correlations.csv", fio.dumps_correlation_report(report)),
                fio.atomic_write_text(stage / "correlations.txt", text),
            ]
            if summary is not None:
                files.append(fio.atomic_write_text(stage / "summary.txt", format_summary(summary)))
            run.finish(stage / "manifest.json", [out / f.relative_to(stage) for f in files])
    return 0


def cmd_report_summary(args, run: _Run) -> int:
    table = fio.read_metric_table(args.table)
    if args.columns:
        cols = list(dict.fromkeys(_columns(args.columns) + [args.rank_by]))
        table = MetricTable(table.model_ids, {c: table.column(c) for c in cols})
    summary = summarize(table, args.rank_by, min(args.top_k, len(table)))
    text = format_summary(summary)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        fio.atomic_write_text(out, text)
        run.manifest.inputs = {"table": str(args.table)}
        run.finish(_manifest_for(out), [out])
    return 0


# ---------------------------------------------------------------------------
# early stopping


def _threshold(text):
    if text is None or text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be a number or 'auto'") from None


def cmd_earlystop_analyze(args, run: _Run) -> int:
    records = fio.read_trajectory_dir(args.trajectories)
    report = savings_analysis(
        records,
        args.policy,
        metric=args.metric,
        window=args.window,
        sd_tol=args.sd_tol,
        threshold=args.threshold,
        gate_at=args.gate_at,
    )
    quality = None
    if args.quality_metric:
        from .search import metric_table

        table = metric_table([r for r in records if args.quality_metric in r.final])
        quality = retention_quality(report, table, args.quality_metric)
    text = format_savings(report, quality)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        run.manifest.inputs = {"trajectories": str(args.trajectories)}
        run.manifest.extra = {"policy": args.policy, **{k: v for k, v in report.params.items()}}
        with fio.staged_dir(out) as stage:
            files = [
                fio.atomic_write_text(stage / "savings.csv", fio.dumps_savings(report)),
                fio.atomic_write_text(stage / "savings.txt", text),
            ]
            run.finish(stage / "manifest.json", [out / f.relative_to(stage) for f in files])
    return 0


# ---------------------------------------------------------------------------
# toy data and evaluation


def cmd_toy_gen(args, run: _Run) -> int:
    from .toy import PopulationSpec, build_environment, gen_gallery_trials, simulate_population

    out = Path(args.out)
    run.manifest.master_seed = args.seed
    if args.stimuli:
        env = build_environment(seed=args.seed)
        with fio.staged_dir(out) as stage:
            files = fio.write_stimuli(stage, env.stimuli)
            run.finish(stage / "manifest.json", [out / f.relative_to(stage) for f in files])
        print(f"stimuli={len(env.stimuli)} out={out}")
    elif args.reference_rdm:
        env = build_environment(seed=args.seed)
        fio.write_rdm(out, env.reference)
        run.finish(_manifest_for(out), [out])
        print(f"m={env.reference.m} entries={env.reference.entries.size}")
    elif args.trajectories:
        records = simulate_population(PopulationSpec(n_models=args.n), seed=args.seed)
        with fio.staged_dir(out) as stage:
            files = fio.write_trajectory_dir(stage, records)
            run.finish(stage / "manifest.json", [out / f.relative_to(stage) for f in files])
        print(f"trajectories={len(records)} out={out}")
    else:
        trials = gen_gallery_trials(args.n, args.gallery_size, 8, args.seed)
        from .evaluation import MatchingTrial

        converted = [MatchingTrial(t.probe.ravel(), t.gallery.reshape(len(t.gallery), -1), t.true_index) for t in trials]
        fio.atomic_write_text(out, fio.dumps_trials(converted))
        run.finish(_manifest_for(out), [out])
        print(f"trials={len(converted)} out={out}")
    return 0


def cmd_eval_match(args, run: _Run) -> int:
    trials = fio.loads_trials(Path(args.trials).read_text(encoding="utf-8"))
    print(f"{matching_accuracy(trials):.6f}")
    return 0


def cmd_eval_mse(args, run: _Run) -> int:
    print(f"{next_frame_mse(fio.read_frame(args.predicted), fio.read_frame(args.actual)):.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmsearch",
        description="Human-model similarity tools: RDMs, HMS, hyperparameter search, reports, early stopping.",
        epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"hmsearch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(parent, name, func, help):
        p = parent.add_parser(name, help=help, description=help, epilog=FORMATS_HELP,
                              formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    rdm = sub.add_parser("rdm", help="build or average RDMs").add_subparsers(dest="rdm_command", required=True)
    p = add(rdm, "build", cmd_rdm_build, "build an RDM from an activation CSV or a sequence directory")
    p.add_argument("--activations", required=True, help="activation CSV, or a directory of per-frame CSVs")
    p.add_argument("--pooling", choices=POOLING_MODES, default="mean",
                   help="how frames after the first are combined (sequence input only)")
    p.add_argument("--out", required=True, help="RDM file to write")
    p = add(rdm, "average", cmd_rdm_average, "entry-wise mean of RDMs over the same stimuli")
    p.add_argument("rdms", nargs="+", help="RDM files")
    p.add_argument("--out", required=True)

    p = add(sub, "hms", cmd_hms, "Spearman rho between two RDMs, printed with 6 decimals")
    p.add_argument("rdm_a")
    p.add_argument("rdm_b")

    search = sub.add_parser("search", help="hyperparameter sweeps").add_subparsers(dest="search_command", required=True)
    p = add(search, "run", cmd_search_run, "run a seeded random search (JSON config)")
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="worker processes (overrides the config)")

    report = sub.add_parser("report", help="correlation and summary tables").add_subparsers(dest="report_command", required=True)
    p = add(report, "correlations", cmd_report_correlations, "pairwise Spearman report with Bonferroni correction")
    p.add_argument("--table", required=True, help="metric table CSV")
    p.add_argument("--columns", default="hms,accuracy,mse", help="comma-separated columns")
    p.add_argument("--control", help="partial correlations controlling for this column")
    p.add_argument("--alpha", type=float, default=0.001, help="significance marker level")
    p.add_argument("--rank-by", default="hms", help="summary ranking column")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", help="directory for correlations.csv/.txt and summary.txt")
    p = add(report, "summary", cmd_report_summary, "mean/SD per column, overall and for top/bottom rows")
    p.add_argument("--table", required=True)
    p.add_argument("--columns", help="comma-separated columns (default: all)")
    p.add_argument("--rank-by", default="hms")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", help="text file to write")

    es = sub.add_parser("earlystop", help="early-stopping analyses").add_subparsers(dest="earlystop_command", required=True)
    p = add(es, "analyze", cmd_earlystop_analyze, "apply a stopping policy to trajectory CSVs")
    p.add_argument("--trajectories", required=True, help="directory of per-model trajectory CSVs")
    p.add_argument("--policy", choices=("stability", "threshold"), default="stability")
    p.add_argument("--metric", default="hms")
    p.add_argument("--window", type=int, default=25, help="stability window in epochs")
    p.add_argument("--sd-tol", type=float, default=0.01, help="stability SD tolerance")
    p.add_argument("--threshold", type=_threshold, default=None, help="number or 'auto' (mean + SD of finals)")
    p.add_argument("--gate-at", choices=("stable", "final"), default="stable")
    p.add_argument("--quality-metric", default="accuracy",
                   help="compare retained and discarded models on this final metric ('' to skip)")
    p.add_argument("--out", help="directory for savings.csv/.txt")

    toy = sub.add_parser("toy", help="synthetic data").add_subparsers(dest="toy_command", required=True)
    p = add(toy, "gen", cmd_toy_gen, "generate toy stimuli, a reference RDM, trajectories or matching trials")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--stimuli", action="store_true", help="stimulus images and labels (directory)")
    what.add_argument("--reference-rdm", action="store_true", help="synthetic reference RDM (file)")
    what.add_argument("--trajectories", action="store_true", help="simulated training trajectories (directory)")
    what.add_argument("--trials", action="store_true", help="probe/gallery matching trials (file)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-n", type=int, default=95, help="number of trajectories or trials")
    p.add_argument("--gallery-size", type=int, default=50)
    p.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="performance metrics").add_subparsers(dest="eval_command", required=True)
    p = add(ev, "match", cmd_eval_match, "probe/gallery matching accuracy")
    p.add_argument("--trials", required=True)
    p = add(ev, "mse", cmd_eval_mse, "next-frame mean squared error")
    p.add_argument("--predicted", required=True)
    p.add_argument("--actual", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    run = _Run(argv)
    try:
        return args.func(args, run)
    except HmsError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
