"""Aggregation of finished run directories into report tables and
figures.

A report is computed from directory contents alone (manifest plus the
per-repetition JSONL logs), never from in-process state. Two tables
come out: the mean best-score-so-far per step for every searcher, and
the fraction of evaluated models whose score clears each threshold in
0.1..0.9. The same rows feed the CSV emitter and the rendered figures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ArchspaceError

THRESHOLDS = [round(0.1 * i, 1) for i in range(1, 10)]

BEST_FIGURE = "best_so_far.png"
FRACTION_FIGURE = "fraction_above_threshold.png"


class ReportError(ArchspaceError):
    """Missing or mutually incompatible run directories."""


@dataclass
class RunData:
    directory: Path
    manifest: dict
    reps: list[list[dict]]

    @property
    def searcher(self) -> str:
        return self.manifest["searcher"]["kind"]


def load_run(run_dir) -> RunData:
    directory = Path(run_dir)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ReportError(f"{directory}: no manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    reps = []
    for log in sorted(directory.glob("rep_*.jsonl")):
        with open(log, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        if len(records) != manifest["budget"]:
            raise ReportError(
                f"{log}: {len(records)} records, manifest budget {manifest['budget']}"
            )
        reps.append(records)
    if not reps:
        raise ReportError(f"{directory}: no rep_*.jsonl logs")
    return RunData(directory, manifest, reps)


def check_compatible(runs: list[RunData]) -> None:
    budgets = {r.manifest["budget"] for r in runs}
    if len(budgets) != 1:
        raise ReportError(f"runs disagree on budget: {sorted(budgets)}")
    evaluators = {r.manifest["evaluator"] for r in runs}
    if len(evaluators) != 1:
        raise ReportError(f"runs disagree on evaluator: {sorted(evaluators)}")


def mean_stderr(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    variance = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(variance / n)


def _reps_by_searcher(runs: list[RunData]) -> dict[str, list[list[dict]]]:
    grouped: dict[str, list[list[dict]]] = {}
    for run in runs:
        grouped.setdefault(run.searcher, []).extend(run.reps)
    return grouped


def best_so_far_table(runs: list[RunData]) -> list[dict]:
    """Rows of searcher, step, mean_best, stderr_best; the running-best
    curves are averaged across repetitions."""
    rows = []
    for searcher, reps in sorted(_reps_by_searcher(runs).items()):
        budget = len(reps[0])
        for step in range(1, budget + 1):
            bests = [rep[step - 1]["best"] for rep in reps]
            mean, stderr = mean_stderr(bests)
            rows.append(
                {
                    "searcher": searcher,
                    "step": step,
                    "mean_best": mean,
                    "stderr_best": stderr,
                }
            )
    return rows


def fraction_above_table(runs: list[RunData], thresholds=None) -> list[dict]:
    """Rows of searcher, threshold, fraction_mean, fraction_stderr: the
    per-repetition fraction of evaluated models scoring above each
    threshold, averaged across repetitions. Non-increasing in the
    threshold by construction."""
    thresholds = THRESHOLDS if thresholds is None else thresholds
    rows = []
    for searcher, reps in sorted(_reps_by_searcher(runs).items()):
        for threshold in thresholds:
            fractions = [
                sum(1 for rec in rep if rec["score"] > threshold) / len(rep)
                for rep in reps
            ]
            mean, stderr = mean_stderr(fractions)
            rows.append(
                {
                    "searcher": searcher,
                    "threshold": threshold,
                    "fraction_mean": mean,
                    "fraction_stderr": stderr,
                }
            )
    return rows


def render_figures(best_rows: list[dict], fraction_rows: list[dict], out_dir) -> list[Path]:
    """Render both report tables as PNG files next to the CSV output."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for searcher in sorted({row["searcher"] for row in best_rows}):
        rows = [r for r in best_rows if r["searcher"] == searcher]
        steps = [r["step"] for r in rows]
        means = [r["mean_best"] for r in rows]
        errs = [r["stderr_best"] for r in rows]
        ax.errorbar(steps, means, yerr=errs, label=searcher, capsize=2, linewidth=1.2)
    ax.set_xlabel("evaluations")
    ax.set_ylabel("best score so far")
    ax.legend()
    fig.tight_layout()
    target = out / BEST_FIGURE
    fig.savefig(target, dpi=150)
    plt.close(fig)
    written.append(target)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for searcher in sorted({row["searcher"] for row in fraction_rows}):
        rows = [r for r in fraction_rows if r["searcher"] == searcher]
        thresholds = [r["threshold"] for r in rows]
        means = [r["fraction_mean"] for r in rows]
        errs = [r["fraction_stderr"] for r in rows]
        ax.errorbar(thresholds, means, yerr=errs, label=searcher, capsize=2, linewidth=1.2)
    ax.set_xlabel("score threshold")
    ax.set_ylabel("fraction of models above")
    ax.legend()
    fig.tight_layout()
    target = out / FRACTION_FIGURE
    fig.savefig(target, dpi=150)
    plt.close(fig)
    written.append(target)
    return written
