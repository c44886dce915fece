"""Progress label assignment.

Three labelers share one output shape:

* ``LCS``: align a trajectory against its goal's best recipe; a step
  matched to recipe position kappa (1-based) is a key step labeled
  kappa / recipe_length, and every other step inherits the nearest
  preceding key label (0 before the first key step).
* ``ENV``: milestone-rewarded steps are the key steps; the lambda-th
  one is labeled lambda / milestone_total.
* ``LINEAR``: the naive baseline t / T over successful trajectories.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ._util import atomic_write_text, parallel_map
from .model import LabeledStep, Trajectory, milestone_step_indices
from .recipes import Recipe, RecipeLibrary
from .softlcs import NOTHING_MATCH_WEIGHT, Alignment, soft_lcs, soft_lcs_align
from .textsim import TextSimilarityFn, token_cosine


class LabelingError(Exception):
    pass


class NoRecipeError(LabelingError):
    def __init__(self, goal_id: str):
        self.goal_id = goal_id
        super().__init__(f"no recipe for goal {goal_id!r}")


class Labeler(enum.Enum):
    LCS = "lcs"
    ENV = "env"
    LINEAR = "linear"


@dataclass(frozen=True)
class LabeledTrajectory:
    traj_id: str
    labeler: Labeler
    labels: tuple[LabeledStep, ...]
    matched_recipe_id: str | None = None
    completion_ratio: float | None = None
    library_config_hash: str | None = None

    def __post_init__(self):
        if isinstance(self.labels, list):
            object.__setattr__(self, "labels", tuple(self.labels))
        previous = 0.0
        for label in self.labels:
            if label.progress < previous:
                raise ValueError(
                    f"labels must be non-decreasing, step {label.step_index} "
                    f"drops {previous} -> {label.progress}"
                )
            previous = label.progress
        if self.completion_ratio is not None and not 0.0 <= self.completion_ratio <= 1.0:
            raise ValueError(f"completion_ratio out of range: {self.completion_ratio}")

    @property
    def progress(self) -> tuple[float, ...]:
        return tuple(label.progress for label in self.labels)

    @property
    def final_progress(self) -> float:
        return self.labels[-1].progress if self.labels else 0.0

    def key_step_indices(self) -> tuple[int, ...]:
        return tuple(label.step_index for label in self.labels if label.is_key)


def completion_ratio(
    trajectory: Trajectory,
    recipe: Recipe,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> float:
    """Fraction of the recipe matched, using the soft score as the match count."""
    return soft_lcs(trajectory.actions, recipe.actions, ts, epsilon) / len(recipe)


def select_recipe(
    trajectory: Trajectory,
    library: RecipeLibrary,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> tuple[Recipe, Alignment, float]:
    """Pick the goal's recipe maximizing the completion ratio.

    Ties go to the longer recipe, then the lexicographically smallest
    recipe_id.
    """
    recipes = library.recipes_for(trajectory.goal_id)
    if not recipes:
        raise NoRecipeError(trajectory.goal_id)
    scored = sorted(
        ((completion_ratio(trajectory, r, ts, epsilon), r) for r in recipes),
        key=lambda item: (-item[0], -len(item[1]), item[1].recipe_id),
    )
    ratio, recipe = scored[0]
    alignment = soft_lcs_align(trajectory.actions, recipe.actions, ts, epsilon)
    return recipe, alignment, ratio


def _labels_from_key_steps(
    step_count: int, key_positions: Mapping[int, int], denominator: int
) -> tuple[LabeledStep, ...]:
    """Shared assignment core: key step at index i with 1-based position
    kappa gets kappa / denominator, everything else inherits."""
    labels = []
    progress = 0.0
    for index in range(step_count):
        position = key_positions.get(index)
        if position is not None:
            progress = position / denominator
            labels.append(
                LabeledStep(
                    step_index=index,
                    progress=progress,
                    is_key=True,
                    recipe_position=position,
                )
            )
        else:
            labels.append(
                LabeledStep(step_index=index, progress=progress, is_key=False)
            )
    return tuple(labels)


def assign_progress_lcs(
    trajectory: Trajectory,
    library: RecipeLibrary,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
) -> LabeledTrajectory:
    recipe, alignment, ratio = select_recipe(trajectory, library, ts, epsilon)
    key_positions = {pair.i: pair.j + 1 for pair in alignment.pairs}
    return LabeledTrajectory(
        traj_id=trajectory.traj_id,
        labeler=Labeler.LCS,
        labels=_labels_from_key_steps(len(trajectory), key_positions, len(recipe)),
        matched_recipe_id=recipe.recipe_id,
        completion_ratio=ratio,
        library_config_hash=library.config.hash(),
    )


def assign_progress_env(
    trajectory: Trajectory, milestone_total: int
) -> LabeledTrajectory:
    if milestone_total <= 0:
        raise LabelingError(f"milestone_total must be positive, got {milestone_total}")
    observed = milestone_step_indices(trajectory)
    if len(observed) > milestone_total:
        raise LabelingError(
            f"trajectory {trajectory.traj_id!r} has {len(observed)} milestone "
            f"steps but milestone_total is {milestone_total}"
        )
    key_positions = {index: rank + 1 for rank, index in enumerate(observed)}
    return LabeledTrajectory(
        traj_id=trajectory.traj_id,
        labeler=Labeler.ENV,
        labels=_labels_from_key_steps(len(trajectory), key_positions, milestone_total),
    )


def assign_progress_linear(trajectory: Trajectory) -> LabeledTrajectory:
    if not trajectory.success:
        raise LabelingError(
            f"linear labeling assumes success, trajectory "
            f"{trajectory.traj_id!r} failed"
        )
    total = len(trajectory)
    key_positions = {index: index + 1 for index in range(total)}
    return LabeledTrajectory(
        traj_id=trajectory.traj_id,
        labeler=Labeler.LINEAR,
        labels=_labels_from_key_steps(total, key_positions, total),
    )


def infer_milestone_totals(dataset: Sequence[Trajectory]) -> dict[str, int]:
    """Per-goal milestone schedule length: the max milestone count among
    that goal's successful trajectories."""
    totals: dict[str, int] = {}
    for trajectory in dataset:
        if not trajectory.success:
            continue
        count = len(milestone_step_indices(trajectory))
        if count > totals.get(trajectory.goal_id, 0):
            totals[trajectory.goal_id] = count
    return totals


@dataclass
class LabelSummary:
    labeler: Labeler
    total: int = 0
    labeled: int = 0
    skipped: dict[str, str] = field(default_factory=dict)
    skipped_goal_counts: dict[str, int] = field(default_factory=dict)
    full_match_failures: list[str] = field(default_factory=list)

    def record_skip(self, trajectory: Trajectory, reason: str) -> None:
        self.skipped[trajectory.traj_id] = reason
        self.skipped_goal_counts[trajectory.goal_id] = (
            self.skipped_goal_counts.get(trajectory.goal_id, 0) + 1
        )


def label_dataset(
    dataset: Sequence[Trajectory],
    library: RecipeLibrary | None,
    mode: Labeler,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
    milestone_totals: Mapping[str, int] | None = None,
    threads: int = 1,
) -> tuple[list[LabeledTrajectory], LabelSummary]:
    """Label every trajectory that the chosen labeler can handle.

    Nothing here is fatal: trajectories the labeler cannot process are
    skipped with a per-trajectory reason, and failed trajectories that
    nevertheless reach a final label of 1.0 are flagged as full-match
    collisions.
    """
    summary = LabelSummary(labeler=mode, total=len(dataset))
    if mode is Labeler.LCS and library is None:
        raise LabelingError("LCS labeling requires a recipe library")
    totals: dict[str, int] = {}
    if mode is Labeler.ENV:
        totals = infer_milestone_totals(dataset)
        if milestone_totals:
            totals.update(milestone_totals)

    def label_one(trajectory: Trajectory) -> LabeledTrajectory | str:
        try:
            if mode is Labeler.LCS:
                return assign_progress_lcs(trajectory, library, ts, epsilon)
            if mode is Labeler.ENV:
                total = totals.get(trajectory.goal_id)
                if total is None:
                    return "no milestone schedule for goal"
                return assign_progress_env(trajectory, total)
            return assign_progress_linear(trajectory)
        except LabelingError as error:
            return str(error)

    results: list[LabeledTrajectory] = []
    for trajectory, outcome in zip(dataset, parallel_map(label_one, dataset, threads)):
        if isinstance(outcome, str):
            summary.record_skip(trajectory, outcome)
            continue
        results.append(outcome)
        summary.labeled += 1
        if not trajectory.success and outcome.final_progress >= 1.0:
            summary.full_match_failures.append(trajectory.traj_id)
    return results, summary


def _label_to_dict(label: LabeledStep) -> dict:
    data = {
        "step_index": label.step_index,
        "progress": label.progress,
        "is_key": label.is_key,
    }
    if label.recipe_position is not None:
        data["recipe_position"] = label.recipe_position
    return data


def labeled_to_dict(labeled: LabeledTrajectory) -> dict:
    data = {
        "traj_id": labeled.traj_id,
        "labeler": labeled.labeler.value,
        "labels": [_label_to_dict(l) for l in labeled.labels],
    }
    if labeled.matched_recipe_id is not None:
        data["matched_recipe_id"] = labeled.matched_recipe_id
    if labeled.completion_ratio is not None:
        data["completion_ratio"] = labeled.completion_ratio
    if labeled.library_config_hash is not None:
        data["library_config_hash"] = labeled.library_config_hash
    return data


def labeled_from_dict(data: dict) -> LabeledTrajectory:
    labels = tuple(
        LabeledStep(
            step_index=l["step_index"],
            progress=l["progress"],
            is_key=l["is_key"],
            recipe_position=l.get("recipe_position"),
        )
        for l in data["labels"]
    )
    return LabeledTrajectory(
        traj_id=data["traj_id"],
        labeler=Labeler(data["labeler"]),
        labels=labels,
        matched_recipe_id=data.get("matched_recipe_id"),
        completion_ratio=data.get("completion_ratio"),
        library_config_hash=data.get("library_config_hash"),
    )


def write_labels(path: str | os.PathLike, results: Iterable[LabeledTrajectory]) -> None:
    lines = [
        json.dumps(labeled_to_dict(r), sort_keys=True, ensure_ascii=False)
        for r in results
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_labels(path: str | os.PathLike) -> list[LabeledTrajectory]:
    results = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                results.append(labeled_from_dict(json.loads(line)))
            except (KeyError, ValueError) as error:
                raise LabelingError(f"line {number}: {error}") from error
    return results
