"""Dense progress rewards and the sparse outcome baseline.

The reward at step t is the progress gained over the past k steps,
r_t = p_t - p_{t-k}; references before the first step clamp to the
initial-state progress p0, so with k=1 the series telescopes to
p_T - p0.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

from ._util import atomic_write_text
from .estimator import (
    ProgressModel,
    initial_state_view,
    predict_progress_state,
    score_remote,
    state_view,
)
from .labeling import LabeledTrajectory
from .model import Trajectory


class RewardError(Exception):
    pass


class RewardSource(enum.Enum):
    ESTIMATOR = "estimator"
    LABELS = "labels"
    REMOTE = "remote"


@dataclass(frozen=True)
class RewardSeries:
    traj_id: str
    k: int
    source: RewardSource
    rewards: tuple[float, ...]

    def __post_init__(self):
        if isinstance(self.rewards, list):
            object.__setattr__(self, "rewards", tuple(self.rewards))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for reward in self.rewards:
            if not -1.0 <= reward <= 1.0:
                raise ValueError(f"reward {reward} outside [-1, 1]")

    @property
    def total(self) -> float:
        return sum(self.rewards)


def progress_rewards(
    progress: Sequence[float], k: int, p0: float = 0.0
) -> list[float]:
    """Per-step progress gain over the past ``k`` steps."""
    if k < 1:
        raise RewardError(f"k must be >= 1, got {k}")
    if not 0.0 <= p0 <= 1.0 or not math.isfinite(p0):
        raise RewardError(f"p0 {p0} outside [0, 1]")
    for value in progress:
        if not 0.0 <= value <= 1.0 or not math.isfinite(value):
            raise RewardError(f"progress value {value} outside [0, 1]")
    rewards = []
    for t, current in enumerate(progress):
        previous = progress[t - k] if t - k >= 0 else p0
        rewards.append(current - previous)
    return rewards


def outcome_reward(success: bool, length: int) -> list[float]:
    """Sparse terminal reward: 1 at the final step of a success, else 0."""
    if length < 0:
        raise RewardError(f"length must be non-negative, got {length}")
    if length == 0:
        return []
    rewards = [0.0] * length
    if success:
        rewards[-1] = 1.0
    return rewards


def reward_trajectory(
    trajectory: Trajectory,
    source: RewardSource,
    k: int = 1,
    model: ProgressModel | None = None,
    labels: LabeledTrajectory | None = None,
    endpoint: str | None = None,
    timeout: float = 10.0,
) -> RewardSeries:
    """Obtain the per-step progress series from the chosen source and
    difference it into rewards.

    The initial-state progress p0 is the estimator's score of the
    empty-history state when the estimator produces the series; stored
    labels and remote scorers define progress from step 1 only, so p0
    is 0 for them.
    """
    if source is RewardSource.ESTIMATOR:
        if model is None:
            raise RewardError("estimator source requires a model")
        progress = [
            predict_progress_state(model, state_view(trajectory, index))
            for index in range(len(trajectory))
        ]
        p0 = predict_progress_state(model, initial_state_view(trajectory))
    elif source is RewardSource.LABELS:
        if labels is None:
            raise RewardError("labels source requires a labeled trajectory")
        if labels.traj_id != trajectory.traj_id:
            raise RewardError(
                f"labels are for {labels.traj_id!r}, not {trajectory.traj_id!r}"
            )
        if len(labels.labels) != len(trajectory):
            raise RewardError(
                f"label count {len(labels.labels)} does not match "
                f"step count {len(trajectory)}"
            )
        progress = list(labels.progress)
        p0 = 0.0
    elif source is RewardSource.REMOTE:
        if endpoint is None:
            raise RewardError("remote source requires an endpoint")
        progress = [
            score_remote(endpoint, state_view(trajectory, index), timeout)[0]
            for index in range(len(trajectory))
        ]
        p0 = 0.0
    else:
        raise RewardError(f"unknown reward source {source!r}")

    return RewardSeries(
        traj_id=trajectory.traj_id,
        k=k,
        source=source,
        rewards=tuple(progress_rewards(progress, k, p0)),
    )


def reward_to_dict(series: RewardSeries) -> dict:
    return {
        "traj_id": series.traj_id,
        "k": series.k,
        "source": series.source.value,
        "rewards": list(series.rewards),
    }


def reward_from_dict(data: dict) -> RewardSeries:
    return RewardSeries(
        traj_id=data["traj_id"],
        k=int(data["k"]),
        source=RewardSource(data["source"]),
        rewards=tuple(float(r) for r in data["rewards"]),
    )


def write_rewards(path: str | os.PathLike, series: Iterable[RewardSeries]) -> None:
    lines = [
        json.dumps(reward_to_dict(s), sort_keys=True, ensure_ascii=False)
        for s in series
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_rewards(path: str | os.PathLike) -> list[RewardSeries]:
    result = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                result.append(reward_from_dict(json.loads(line)))
            except (KeyError, ValueError) as error:
                raise RewardError(f"line {number}: {error}") from error
    return result
