"""Command-line front end: run campaigns, score single structures, rebuild
reports from record streams.

Exit codes: 0 success, 2 configuration/input error, 3 generator unavailable
without a configured fallback. Expected errors emit one-line JSON
diagnostics on stderr, never stack traces.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import evolve, metrics, oracle as oracle_mod
from .crystal import parse_cif
from .errors import GeneratorUnavailable, LlemaError, UnknownTask
from .evolve import CampaignConfig, canonical_json, run_campaign
from .generate import LlmGenerator, ReplayGenerator, RuleBasedGenerator
from .tasks import composite_score, load_task

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(LlemaError):
    pass


def _diagnostic(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def _build_oracle(args) -> oracle_mod.Oracle:
    if args.db:
        db_path = Path(args.db)
        if not db_path.exists():
            raise ConfigError(f"reference database not found: {db_path}")
        db = oracle_mod.ReferenceDB.from_csv(db_path)
    else:
        db = oracle_mod.ReferenceDB.bundled_fixture()
    surrogates = []
    choice = args.surrogate
    if choice == "auto":
        choice = "remote" if os.environ.get("LLEMA_SURROGATE_URL") else "synthetic"
    if choice == "synthetic":
        surrogates.append(oracle_mod.SyntheticSurrogate(seed=args.seed))
    elif choice == "remote":
        remote = oracle_mod.remote_surrogate_from_env()
        if remote is None:
            raise ConfigError("surrogate=remote requires LLEMA_SURROGATE_URL")
        surrogates.append(remote)
    elif choice != "none":
        raise ConfigError(f"unknown surrogate choice {choice!r}")
    return oracle_mod.Oracle(db=db, surrogates=surrogates,
                             remote=oracle_mod.remote_reference_from_env())


def _build_generator(spec: str, seed: int):
    if spec == "rules":
        return RuleBasedGenerator(seed)
    if spec == "llm" or spec.startswith("llm:"):
        model = spec.partition(":")[2] or "gpt-4o-mini"
        try:
            return LlmGenerator(model=model)
        except GeneratorUnavailable as exc:
            raise ConfigError(str(exc)) from None
    if spec.startswith("replay:"):
        path = Path(spec.partition(":")[2])
        if not path.exists():
            raise ConfigError(f"replay file not found: {path}")
        return ReplayGenerator(path)
    raise ConfigError(f"unknown generator spec {spec!r} (use llm[:model], rules, replay:PATH)")


def _write_pareto_csv(records, task, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "formula", "on_front"])
        for x, y, formula, on_front in metrics.pareto_csv_rows(records, task):
            writer.writerow([repr(x), repr(y), formula, on_front])


def _write_coverage_csv(records, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["element", "ratio"])
        for element, ratio in metrics.element_coverage(records).items():
            writer.writerow([element, repr(ratio)])


def cmd_run(args) -> int:
    task = load_task(args.task)
    outdir = Path(args.out or "out")
    if (outdir / "summary.json").exists() and not args.force:
        raise ConfigError(f"{outdir}/summary.json exists; pass --force to overwrite")
    generator = _build_generator(args.generator, args.seed)
    oracle = _build_oracle(args)
    cfg = CampaignConfig(
        iterations=args.iterations,
        islands=args.islands,
        batch=args.batch,
        demos_per_pool=args.demos,
        seed=args.seed,
        seeds_per_island=args.seeds_per_island,
        fallback_rules=args.fallback_rules,
        window=args.window,
    )
    result = run_campaign(task, generator, oracle, cfg)
    paths = evolve.write_campaign_outputs(result, outdir)
    _write_pareto_csv(result.records, task, outdir / "pareto.csv")
    print(
        json.dumps(
            {
                "task": task.name,
                "records": len(result.records),
                "hit_rate": result.metrics.hit_rate,
                "stability_rate": result.metrics.stability_rate,
                "success_pool_size": len(result.success_union),
                "out": [str(p) for p in paths + [outdir / "pareto.csv"]],
            }
        )
    )
    return 0


def cmd_score(args) -> int:
    task = load_task(args.task)
    try:
        structure = parse_cif(Path(args.cif).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read CIF: {exc}") from None
    oracle = _build_oracle(args)
    props = oracle.predict(structure, task.numeric_properties())
    score = composite_score(props, task, elements=structure.elements())
    print(
        canonical_json(
            {
                "formula": structure.reduced_formula,
                "task": task.name,
                "properties": props.as_dict(),
                "score": {
                    "composite": score.composite,
                    "success": score.success,
                    "phi": [
                        {"constraint": c.describe(), "phi": p}
                        for c, p in score.per_constraint_phi
                    ],
                },
            }
        ),
        end="",
    )
    return 0


def cmd_report(args) -> int:
    task = load_task(args.task)
    stream = Path(args.candidates)
    if not stream.exists():
        raise ConfigError(f"record stream not found: {stream}")
    try:
        records = evolve.load_records(stream)
    except (ValueError, KeyError, LlemaError) as exc:
        raise ConfigError(f"corrupt record stream: {exc}") from None
    if args.db:
        db = oracle_mod.ReferenceDB.from_csv(Path(args.db))
    else:
        db = oracle_mod.ReferenceDB.bundled_fixture()
    block = metrics.compute_metrics(records, task, db, window=args.window)
    outdir = Path(args.out) if args.out else stream.parent
    outdir.mkdir(parents=True, exist_ok=True)
    _write_pareto_csv(records, task, outdir / "pareto.csv")
    _write_coverage_csv(records, outdir / "coverage.csv")
    print(canonical_json(metrics.metrics_to_summary(block)), end="")
    return 0


def _merge_config_file(args, parser) -> None:
    """Fill unset flags from the TOML config file (flags always win)."""
    if not args.config:
        return
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = tomllib.loads(path.read_text())
    for key, value in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, attr) is None:
            setattr(args, attr, value)


_DEFAULTS = {
    "iterations": 50,
    "islands": 5,
    "batch": 2,
    "demos": 2,
    "seed": 0,
    "seeds_per_island": 3,
    "window": 10,
    "surrogate": "auto",
    "generator": "rules",
}


def _apply_defaults(args) -> None:
    for key, value in _DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llema",
                                     description="Constrained multi-objective materials search")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--task", required=True, help="builtin task name or TOML path")
        p.add_argument("--db", default=None, help="reference database CSV (default: bundled fixture)")
        p.add_argument("--surrogate", default=None,
                       choices=["auto", "synthetic", "remote", "none"],
                       help="surrogate backend (default auto)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="TOML config mirroring the flags")

    runp = sub.add_parser("run", help="run a discovery campaign")
    common(runp)
    runp.add_argument("--generator", default=None, help="llm[:model] | rules | replay:PATH")
    runp.add_argument("--iterations", type=int, default=None)
    runp.add_argument("--batch", type=int, default=None)
    runp.add_argument("--islands", type=int, default=None)
    runp.add_argument("--demos", type=int, default=None, help="demonstrations per pool (k)")
    runp.add_argument("--seeds-per-island", type=int, default=None, dest="seeds_per_island")
    runp.add_argument("--window", type=int, default=None, help="trace window in iterations")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--force", action="store_true")
    runp.add_argument("--fallback-rules", action="store_true", dest="fallback_rules")
    runp.set_defaults(func=cmd_run)

    scorep = sub.add_parser("score", help="score one CIF against a task")
    common(scorep)
    scorep.add_argument("cif", help="path to a CIF file")
    scorep.set_defaults(func=cmd_score)

    reportp = sub.add_parser("report", help="recompute metrics from candidates.jsonl")
    common(reportp)
    reportp.add_argument("candidates", help="path to candidates.jsonl")
    reportp.add_argument("--window", type=int, default=None)
    reportp.add_argument("--out", default=None, help="directory for pareto.csv/coverage.csv")
    reportp.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config_file(args, parser)
        _apply_defaults(args)
        return args.func(args)
    except GeneratorUnavailable as exc:
        _diagnostic(exc)
        return 3
    except (ConfigError, UnknownTask, LlemaError, OSError) as exc:
        _diagnostic(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
