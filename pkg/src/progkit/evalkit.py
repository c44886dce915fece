"""Evaluation metrics and report emission for progress estimators.

Metrics cover success-judgment confusion statistics, key-step progress
error, final-step score averages, and scorer latency. The report writer
renders two CSV tables, a text summary, and matplotlib figures into a
reports directory.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from ._util import atomic_write_text, percentile
from .estimator import (
    ProgressModel,
    predict_progress_state,
    predict_success,
    state_view,
)
from .labeling import LabeledTrajectory
from .model import Trajectory
from .simenv import TruthRow

TABLE2_HEADER = (
    "judge,tp,fn,tn,fp,tp_pct,fn_pct,tn_pct,fp_pct,"
    "precision_pct,recall_pct,accuracy_pct"
)
TABLE3_HEADER = (
    "scorer,keystep_mae,avg_final_success,avg_final_failure,"
    "latency_mean_s,latency_p50_s,latency_p95_s"
)

FIGURE_NAMES = ("progress_curves.png", "final_scores.png", "keystep_error.png")

_MAX_CURVE_PANELS = 6


class EvalError(Exception):
    """A metric or report input violates its contract."""


@dataclass(frozen=True)
class ConfusionStats:
    """Success-judgment confusion counts with derived rates."""

    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    @property
    def tp_pct(self) -> float:
        return 100.0 * self.tp / self.total

    @property
    def fn_pct(self) -> float:
        return 100.0 * self.fn / self.total

    @property
    def tn_pct(self) -> float:
        return 100.0 * self.tn / self.total

    @property
    def fp_pct(self) -> float:
        return 100.0 * self.fp / self.total

    @property
    def precision(self) -> float:
        denominator = self.tp + self.fp
        return self.tp / denominator if denominator else 0.0

    @property
    def recall(self) -> float:
        denominator = self.tp + self.fn
        return self.tp / denominator if denominator else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def false_positive_rate(self) -> float:
        denominator = self.fp + self.tn
        return self.fp / denominator if denominator else 0.0


def confusion_stats(
    predictions: Sequence[bool], truth: Sequence[bool]
) -> ConfusionStats:
    """Count TP/FN/TN/FP for paired boolean success judgments."""
    if len(predictions) != len(truth):
        raise EvalError(
            f"length mismatch: {len(predictions)} predictions vs {len(truth)} truth"
        )
    if not predictions:
        raise EvalError("confusion_stats requires a non-empty sample")
    tp = fn = tn = fp = 0
    for predicted, actual in zip(predictions, truth):
        if actual:
            if predicted:
                tp += 1
            else:
                fn += 1
        elif predicted:
            fp += 1
        else:
            tn += 1
    return ConfusionStats(tp=tp, fn=fn, tn=tn, fp=fp)


def keystep_mae(estimates: Sequence[float], truth: Sequence[float]) -> float:
    """Mean absolute error between aligned progress estimates and truth."""
    if len(estimates) != len(truth):
        raise EvalError(
            f"length mismatch: {len(estimates)} estimates vs {len(truth)} truth"
        )
    if not estimates:
        raise EvalError("keystep_mae requires a non-empty sample")
    return sum(abs(e - t) for e, t in zip(estimates, truth)) / len(estimates)


def select_key_steps(
    progress_by_traj: Mapping[str, Sequence[float]],
    truth: Iterable[TruthRow],
) -> tuple[list[float], list[float]]:
    """Pair per-step estimates with ground truth at key steps only."""
    estimates: list[float] = []
    expected: list[float] = []
    for row in truth:
        if not row.is_key:
            continue
        series = progress_by_traj.get(row.traj_id)
        if series is None:
            raise EvalError(f"no estimates for trajectory {row.traj_id!r}")
        if not 0 <= row.step_index < len(series):
            raise EvalError(
                f"trajectory {row.traj_id!r} has {len(series)} estimates,"
                f" truth references step {row.step_index}"
            )
        estimates.append(series[row.step_index])
        expected.append(row.true_progress)
    return estimates, expected


@dataclass(frozen=True)
class FinalScoreStats:
    """Mean final-step score overall and split by the success flag."""

    overall: float
    success: float | None
    failure: float | None
    success_count: int
    failure_count: int


def avg_final_score(
    dataset: Sequence[Trajectory],
    final_progress: Callable[[Trajectory], float],
) -> FinalScoreStats:
    """Average the scorer's final-step output over a dataset."""
    if not dataset:
        raise EvalError("avg_final_score requires a non-empty dataset")
    success_scores = [final_progress(t) for t in dataset if t.success]
    failure_scores = [final_progress(t) for t in dataset if not t.success]
    combined = success_scores + failure_scores
    return FinalScoreStats(
        overall=sum(combined) / len(combined),
        success=sum(success_scores) / len(success_scores) if success_scores else None,
        failure=sum(failure_scores) / len(failure_scores) if failure_scores else None,
        success_count=len(success_scores),
        failure_count=len(failure_scores),
    )


@dataclass(frozen=True)
class LatencyStats:
    """Wall-clock statistics over repeated scorer invocations."""

    mean_s: float
    p50_s: float
    p95_s: float
    repetitions: int


def measure_latency(thunk: Callable[[], object], repetitions: int) -> LatencyStats:
    """Time repeated calls of a scorer, excluding one warm-up call."""
    if repetitions < 1:
        raise EvalError("measure_latency requires repetitions >= 1")
    thunk()
    samples: list[float] = []
    for _ in range(repetitions):
        started = time.perf_counter()
        thunk()
        samples.append(time.perf_counter() - started)
    samples.sort()
    return LatencyStats(
        mean_s=sum(samples) / len(samples),
        p50_s=percentile(samples, 0.5),
        p95_s=percentile(samples, 0.95),
        repetitions=repetitions,
    )


@dataclass(frozen=True)
class ScorerRow:
    """One table row of progress-quality metrics for a scorer."""

    name: str
    keystep_mae: float | None
    final_scores: FinalScoreStats
    latency: LatencyStats | None = None


@dataclass(frozen=True)
class ReportPaths:
    """Files emitted by build_report."""

    table2: Path
    table3: Path
    summary: Path
    figures: tuple[Path, ...]


def _format_cell(value: float | None) -> str:
    return "" if value is None else format(value, ".6f")


def write_confusion_table(
    path: str | Path, rows: Sequence[tuple[str, ConfusionStats]]
) -> None:
    """Write judge confusion counts and percentage rates as CSV."""
    lines = [TABLE2_HEADER]
    for name, stats in rows:
        lines.append(
            ",".join(
                [
                    name,
                    str(stats.tp),
                    str(stats.fn),
                    str(stats.tn),
                    str(stats.fp),
                    _format_cell(stats.tp_pct),
                    _format_cell(stats.fn_pct),
                    _format_cell(stats.tn_pct),
                    _format_cell(stats.fp_pct),
                    _format_cell(100.0 * stats.precision),
                    _format_cell(100.0 * stats.recall),
                    _format_cell(100.0 * stats.accuracy),
                ]
            )
        )
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_quality_table(path: str | Path, rows: Sequence[ScorerRow]) -> None:
    """Write per-scorer progress-quality metrics as CSV."""
    lines = [TABLE3_HEADER]
    for row in rows:
        latency = row.latency
        lines.append(
            ",".join(
                [
                    row.name,
                    _format_cell(row.keystep_mae),
                    _format_cell(row.final_scores.success),
                    _format_cell(row.final_scores.failure),
                    _format_cell(latency.mean_s if latency else None),
                    _format_cell(latency.p50_s if latency else None),
                    _format_cell(latency.p95_s if latency else None),
                ]
            )
        )
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _save_figure(fig: plt.Figure, path: Path) -> None:
    # Strip the backend's software tag so rerenders are byte-identical.
    temp = path.with_name(path.name + ".tmp")
    fig.savefig(temp, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    temp.replace(path)


def _figure_progress_curves(
    path: Path,
    dataset: Sequence[Trajectory],
    truth_by_traj: Mapping[str, list[TruthRow]],
    estimated: Mapping[str, Sequence[float]],
) -> None:
    chosen = [t for t in dataset if t.traj_id in truth_by_traj][:_MAX_CURVE_PANELS]
    columns = min(3, max(1, len(chosen)))
    rows = (len(chosen) + columns - 1) // columns
    fig, axes = plt.subplots(
        rows, columns, figsize=(4 * columns, 3 * rows), squeeze=False
    )
    for index, trajectory in enumerate(chosen):
        ax = axes[index // columns][index % columns]
        steps = list(range(1, len(trajectory) + 1))
        truth_values = [r.true_progress for r in truth_by_traj[trajectory.traj_id]]
        ax.step(steps, truth_values, where="post", label="truth")
        ax.plot(steps, estimated[trajectory.traj_id], marker="o", label="estimated")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(trajectory.traj_id, fontsize=8)
        ax.set_xlabel("step")
        ax.set_ylabel("progress")
        ax.legend(fontsize=7)
    for index in range(len(chosen), rows * columns):
        axes[index // columns][index % columns].set_axis_off()
    fig.tight_layout()
    _save_figure(fig, path)


def _figure_final_scores(
    path: Path, dataset: Sequence[Trajectory], final_scores: Mapping[str, float]
) -> None:
    success = [final_scores[t.traj_id] for t in dataset if t.success]
    failure = [final_scores[t.traj_id] for t in dataset if not t.success]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = [i / 10 for i in range(11)]
    ax.hist(
        [success, failure],
        bins=bins,
        label=["success", "failure"],
        color=["tab:green", "tab:red"],
    )
    ax.set_xlabel("predicted final-step progress")
    ax.set_ylabel("trajectories")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, path)


def _figure_keystep_error(path: Path, rows: Sequence[ScorerRow]) -> None:
    plotted = [r for r in rows if r.keystep_mae is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(
        [r.name for r in plotted],
        [r.keystep_mae for r in plotted],
        color="tab:blue",
    )
    ax.set_ylabel("key-step progress MAE")
    fig.tight_layout()
    _save_figure(fig, path)


def _estimator_series(model: ProgressModel, trajectory: Trajectory) -> list[float]:
    return [
        predict_progress_state(model, state_view(trajectory, index))
        for index in range(len(trajectory))
    ]


def _summary_text(
    dataset: Sequence[Trajectory],
    confusion_rows: Sequence[tuple[str, ConfusionStats]],
    scorer_rows: Sequence[ScorerRow],
    tau_s: float,
) -> str:
    successes = sum(1 for t in dataset if t.success)
    lines = [
        "progress estimation report",
        "==========================",
        f"trajectories: {len(dataset)}"
        f" (success {successes}, failure {len(dataset) - successes})",
        f"steps: {sum(len(t) for t in dataset)}",
        f"success threshold tau_s: {tau_s}",
        "",
        "success judgment (counts and % of evaluated trajectories)",
    ]
    for name, stats in confusion_rows:
        lines.append(
            f"  {name}: TP {stats.tp} ({stats.tp_pct:.2f}%),"
            f" FN {stats.fn} ({stats.fn_pct:.2f}%),"
            f" TN {stats.tn} ({stats.tn_pct:.2f}%),"
            f" FP {stats.fp} ({stats.fp_pct:.2f}%)"
        )
        lines.append(
            f"  {name}: precision {100 * stats.precision:.2f}%,"
            f" recall {100 * stats.recall:.2f}%,"
            f" accuracy {100 * stats.accuracy:.2f}%"
        )
    lines.append("")
    lines.append("progress quality")
    for row in scorer_rows:
        mae = "n/a" if row.keystep_mae is None else f"{row.keystep_mae:.6f}"
        finals = row.final_scores
        success = "n/a" if finals.success is None else f"{finals.success:.6f}"
        failure = "n/a" if finals.failure is None else f"{finals.failure:.6f}"
        lines.append(
            f"  {row.name}: key-step MAE {mae},"
            f" avg final score (success) {success},"
            f" avg final score (failure) {failure}"
        )
        if row.latency is not None:
            lines.append(
                f"  {row.name}: latency mean {row.latency.mean_s:.6f}s,"
                f" p50 {row.latency.p50_s:.6f}s, p95 {row.latency.p95_s:.6f}s"
                f" over {row.latency.repetitions} calls"
            )
    return "\n".join(lines) + "\n"


def build_report(
    dataset: Sequence[Trajectory],
    truth: Sequence[TruthRow],
    model: ProgressModel,
    out_dir: str | Path,
    labels: Mapping[str, LabeledTrajectory] | None = None,
    tau_s: float = 0.5,
    latency_repetitions: int = 0,
) -> ReportPaths:
    """Evaluate a model (and optionally labels) and write the report files.

    Latency columns stay empty unless latency_repetitions > 0, keeping the
    default report byte-reproducible across reruns.
    """
    if not dataset:
        raise EvalError("build_report requires a non-empty dataset")
    if not truth:
        raise EvalError("build_report requires ground truth rows")
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)

    truth_by_traj: dict[str, list[TruthRow]] = {}
    for row in sorted(truth, key=lambda r: (r.traj_id, r.step_index)):
        truth_by_traj.setdefault(row.traj_id, []).append(row)
    known = [t for t in dataset if t.traj_id in truth_by_traj]
    if len(known) != len(dataset):
        missing = sorted(t.traj_id for t in dataset if t.traj_id not in truth_by_traj)
        raise EvalError(f"no ground truth for trajectories: {missing[:5]}")

    estimated = {t.traj_id: _estimator_series(model, t) for t in dataset}
    final_scores = {
        t.traj_id: (estimated[t.traj_id][-1] if len(t) else 0.0) for t in dataset
    }

    confusion_rows = [
        (
            "estimator",
            confusion_stats(
                [predict_success(model, t, tau_s=tau_s) for t in dataset],
                [t.success for t in dataset],
            ),
        )
    ]
    latency = None
    if latency_repetitions > 0:
        probe = state_view(dataset[0], len(dataset[0]) - 1)
        latency = measure_latency(
            lambda: predict_progress_state(model, probe), latency_repetitions
        )
    estimates, expected = select_key_steps(estimated, truth)
    scorer_rows = [
        ScorerRow(
            name="estimator",
            keystep_mae=keystep_mae(estimates, expected) if estimates else None,
            final_scores=avg_final_score(
                dataset, lambda t: final_scores[t.traj_id]
            ),
            latency=latency,
        )
    ]

    if labels is not None:
        labeled = [t for t in dataset if t.traj_id in labels]
        if labeled:
            label_series = {
                t.traj_id: [s.progress for s in labels[t.traj_id].labels]
                for t in labeled
            }
            labeled_ids = set(label_series)
            confusion_rows.append(
                (
                    "labels",
                    confusion_stats(
                        [label_series[t.traj_id][-1] >= tau_s for t in labeled],
                        [t.success for t in labeled],
                    ),
                )
            )
            label_truth = [r for r in truth if r.traj_id in labeled_ids]
            label_estimates, label_expected = select_key_steps(
                label_series, label_truth
            )
            scorer_rows.append(
                ScorerRow(
                    name="labels",
                    keystep_mae=(
                        keystep_mae(label_estimates, label_expected)
                        if label_estimates
                        else None
                    ),
                    final_scores=avg_final_score(
                        labeled, lambda t: label_series[t.traj_id][-1]
                    ),
                )
            )

    table2 = directory / "table2.csv"
    table3 = directory / "table3.csv"
    summary = directory / "summary.txt"
    write_confusion_table(table2, confusion_rows)
    write_quality_table(table3, scorer_rows)
    atomic_write_text(
        summary, _summary_text(dataset, confusion_rows, scorer_rows, tau_s)
    )

    figure_paths = tuple(directory / name for name in FIGURE_NAMES)
    _figure_progress_curves(figure_paths[0], dataset, truth_by_traj, estimated)
    _figure_final_scores(figure_paths[1], dataset, final_scores)
    _figure_keystep_error(figure_paths[2], scorer_rows)

    return ReportPaths(
        table2=table2, table3=table3, summary=summary, figures=figure_paths
    )
