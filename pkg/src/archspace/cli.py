"""Command-line front end: validate, enumerate, compile, search, report.

Exit codes: 0 success, 2 parse or input error, 3 shape-invalid space
root, 4 path mismatch, 5 shape error during compilation, 6 missing or
incompatible run manifests. All outputs are UTF-8; with ``--no-timing``
every subcommand is byte-identical across runs with equal flags.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path as FilePath

from . import __version__
from .core import instantiate
from .dsl import parse
from .errors import (
    ArchspaceError,
    PathMismatch,
    ShapeIncompatible,
    ShapeUnderflow,
    SpaceParseError,
)
from .evaluators import make_evaluator
from .graph import compile_model, signature_hash, to_json
from .nav import SpaceCursor, count_models, enumerate_paths, path_from_json, path_to_obj
from .reporting import (
    ReportError,
    best_so_far_table,
    check_compatible,
    fraction_above_table,
    load_run,
    render_figures,
)
from .search import SEARCHER_KINDS, SearcherConfig, record_to_json, run_search

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SHAPE_ROOT = 3
EXIT_PATH = 4
EXIT_SHAPE = 5
EXIT_REPORT = 6

RUN_DIR_ENV = "ARCHSPACE_RUN_DIR"

DEFAULT_LEAF_CAP = 10**6

_SHAPE_ERRORS = (ShapeIncompatible, ShapeUnderflow)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


class _BadShapeFlag(ArchspaceError):
    pass


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise _BadShapeFlag(
            f"bad input shape {text!r}, expected e.g. 32,32,3 or 784"
        ) from None


def _load_space(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def cmd_validate(args) -> int:
    try:
        expr = _load_space(args.space_file)
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except SpaceParseError as exc:
        return _fail(EXIT_PARSE, f"{args.space_file}:{exc}")
    instantiate(expr)
    count = count_models(expr)
    if count <= args.cap:
        print(f"{count} models")
    else:
        print(f"> {args.cap} models")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    try:
        expr = _load_space(args.space_file)
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except SpaceParseError as exc:
        return _fail(EXIT_PARSE, f"{args.space_file}:{exc}")
    try:
        shape = _parse_shape(args.input_shape)
        result = enumerate_paths(expr, shape, limit=args.limit)
    except _BadShapeFlag as exc:
        return _fail(EXIT_PARSE, str(exc))
    except ArchspaceError as exc:
        return _fail(EXIT_SHAPE_ROOT, str(exc))
    out_dir = FilePath(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(result.paths):
        target = out_dir / f"path_{i:06d}.json"
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(path_to_obj(path), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    note = f" (truncated at limit {args.limit})" if result.truncated else ""
    print(f"wrote {len(result.paths)} paths to {out_dir}{note}")
    if result.pruned:
        print(f"pruned {len(result.pruned)} shape-invalid leaves", file=sys.stderr)
    return EXIT_OK


def cmd_compile(args) -> int:
    try:
        expr = _load_space(args.space_file)
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except SpaceParseError as exc:
        return _fail(EXIT_PARSE, f"{args.space_file}:{exc}")
    try:
        with open(args.path_file, "r", encoding="utf-8") as fh:
            path = path_from_json(fh.read())
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except PathMismatch as exc:
        return _fail(EXIT_PATH, str(exc))
    try:
        shape = _parse_shape(args.input_shape)
        graph = compile_model(expr, shape, path)
    except _BadShapeFlag as exc:
        return _fail(EXIT_PARSE, str(exc))
    except PathMismatch as exc:
        return _fail(EXIT_PATH, str(exc))
    except ArchspaceError as exc:
        return _fail(EXIT_SHAPE, str(exc))
    print(to_json(graph))
    return EXIT_OK


def _manifest_key(manifest: dict) -> dict:
    stripped = dict(manifest)
    stripped.pop("created_at", None)
    return stripped


def _rep_complete(run_dir: FilePath, rep: int, budget: int) -> bool:
    log = run_dir / f"rep_{rep:02d}.jsonl"
    if not log.is_file():
        return False
    with open(log, "r", encoding="utf-8") as fh:
        lines = sum(1 for line in fh if line.strip())
    return lines == budget and (run_dir / f"rep_{rep:02d}_best.csv").is_file()


def _default_run_dir(args, space_hash: str) -> FilePath:
    root = FilePath(os.environ.get(RUN_DIR_ENV, "runs"))
    evaluator_tag = "".join(
        ch if ch.isalnum() or ch in "._-" else "-" for ch in args.evaluator
    )
    name = f"{args.searcher}_{evaluator_tag}_s{args.seed}_{space_hash[:8]}"
    return root / name


def cmd_search(args) -> int:
    try:
        with open(args.space_file, "r", encoding="utf-8") as fh:
            text = fh.read()
        expr = parse(text)
    except OSError as exc:
        return _fail(EXIT_PARSE, str(exc))
    except SpaceParseError as exc:
        return _fail(EXIT_PARSE, f"{args.space_file}:{exc}")
    try:
        shape = _parse_shape(args.input_shape)
        SpaceCursor(expr, shape)  # probe: the root must initialize
    except _BadShapeFlag as exc:
        return _fail(EXIT_PARSE, str(exc))
    except ArchspaceError as exc:
        return _fail(EXIT_SHAPE_ROOT, str(exc))
    try:
        evaluator = make_evaluator(args.evaluator)
        config = SearcherConfig(
            kind=args.searcher,
            c=args.ucb_c,
            branch_factor=args.branch_factor,
            epsilon=args.epsilon,
            rollout_pool=args.rollout_pool,
            ngram_max=args.ngram_max,
            ridge_lambda=args.ridge_lambda,
            seed=args.seed,
        )
    except (ArchspaceError, ValueError) as exc:
        return _fail(EXIT_PARSE, str(exc))

    space_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
    run_dir = FilePath(args.run_dir) if args.run_dir else _default_run_dir(args, space_hash)
    manifest = {
        "space_file": str(args.space_file),
        "space_sha256": space_hash,
        "input_shape": list(shape),
        "searcher": dataclasses.asdict(config),
        "evaluator": args.evaluator,
        "budget": args.budget,
        "reps": args.reps,
        "tool_version": __version__,
    }
    if not args.no_timing:
        manifest["created_at"] = datetime.now(timezone.utc).isoformat()

    manifest_path = run_dir / "manifest.json"
    if manifest_path.is_file():
        with open(manifest_path, "r", encoding="utf-8") as fh:
            existing = json.load(fh)
        if _manifest_key(existing) != _manifest_key(manifest):
            return _fail(EXIT_REPORT, f"{run_dir}: existing manifest does not match flags")
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    models_dir = run_dir / "models"
    models_dir.mkdir(exist_ok=True)
    for rep in range(args.reps):
        if _rep_complete(run_dir, rep, args.budget):
            continue
        rep_config = dataclasses.replace(config, seed=config.seed + rep)
        records = run_search(
            expr, shape, evaluator, rep_config, args.budget, timing=not args.no_timing
        )
        with open(run_dir / f"rep_{rep:02d}.jsonl", "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(record_to_json(rec) + "\n")
        with open(run_dir / f"rep_{rep:02d}_best.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "score", "best"])
            for rec in records:
                writer.writerow([rec.step, repr(rec.score), repr(rec.best_so_far)])
        for rec in records:
            if rec.signature is None:
                continue
            model_path = models_dir / f"{rec.signature}.json"
            if not model_path.is_file():
                graph = compile_model(expr, shape, rec.path)
                with open(model_path, "w", encoding="utf-8") as fh:
                    fh.write(to_json(graph) + "\n")

    # Summary recomputed from the run directory so resumed runs agree.
    per_step: list[dict] = []
    all_reps = []
    for rep in range(args.reps):
        with open(run_dir / f"rep_{rep:02d}.jsonl", "r", encoding="utf-8") as fh:
            all_reps.append([json.loads(line) for line in fh if line.strip()])
    from .reporting import mean_stderr

    for step in range(1, args.budget + 1):
        bests = [rep[step - 1]["best"] for rep in all_reps]
        mean, stderr = mean_stderr(bests)
        per_step.append({"step": step, "mean_best": mean, "stderr_best": stderr})
    summary = {
        "searcher": config.kind,
        "budget": args.budget,
        "reps": args.reps,
        "per_step": per_step,
    }
    if config.kind == "smbo":
        summary["surrogate_training_sizes"] = [
            rec["meta"]["surrogate_n"] for rec in all_reps[0]
        ]
    tmp = run_dir / "summary.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, run_dir / "summary.json")
    print(str(run_dir))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        runs = [load_run(d) for d in args.run_dirs]
        check_compatible(runs)
    except ReportError as exc:
        return _fail(EXIT_REPORT, str(exc))
    best_rows = best_so_far_table(runs)
    fraction_rows = fraction_above_table(runs)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["searcher", "step", "mean_best", "stderr_best"])
    for row in best_rows:
        writer.writerow(
            [row["searcher"], row["step"], repr(row["mean_best"]), repr(row["stderr_best"])]
        )
    print()
    writer.writerow(["searcher", "threshold", "fraction_mean", "fraction_stderr"])
    for row in fraction_rows:
        writer.writerow(
            [
                row["searcher"],
                repr(row["threshold"]),
                repr(row["fraction_mean"]),
                repr(row["fraction_stderr"]),
            ]
        )
    if args.figures:
        written = render_figures(best_rows, fraction_rows, args.figures)
        for target in written:
            print(f"wrote {target}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archspace",
        description="Define, enumerate, compile and search spaces of deep architectures.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a space file and count its models")
    p.add_argument("space_file")
    p.add_argument("--cap", type=int, default=DEFAULT_LEAF_CAP)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("enumerate", help="write every model path as JSON")
    p.add_argument("space_file")
    p.add_argument("--input-shape", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("compile", help="compile one path to graph IR JSON on stdout")
    p.add_argument("space_file")
    p.add_argument("path_file")
    p.add_argument("--input-shape", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("search", help="run a searcher and write a run directory")
    p.add_argument("space_file")
    p.add_argument("--input-shape", required=True)
    p.add_argument("--searcher", choices=SEARCHER_KINDS, default="random")
    p.add_argument("--budget", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--evaluator", required=True, help="linear:<seed>[:sigma] | prefix:<seed> | table:<file> | cmd:<program>[:timeout]")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--run-dir", default=None, help=f"default: ${RUN_DIR_ENV}/<auto>")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields for byte-identical output")
    p.add_argument("--ucb-c", type=float, default=0.25)
    p.add_argument("--branch-factor", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--rollout-pool", type=int, default=512)
    p.add_argument("--ngram-max", type=int, default=3)
    p.add_argument("--ridge-lambda", type=float, default=1.0)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="aggregate run directories to CSV (and figures)")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--figures", default=None, help="also render PNG figures into this directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
