"""JSON Lines serialization for trajectory datasets.

One trajectory per line. Unknown fields are rejected rather than ignored:
a labeling pipeline silently dropping data is worse than failing loudly.
The only tolerated normalization is stripping ``element_id`` from ANSWER
actions, which some source logs attach even though the action semantics
never use it.
"""

from __future__ import annotations

import json
import os
from typing import Iterable

from .model import Action, ActionKind, ScrollDirection, Step, Trajectory


class DatasetError(Exception):
    """Raised for malformed dataset files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_TRAJECTORY_KEYS = {"traj_id", "goal_id", "instruction", "success", "steps"}
_STEP_KEYS = {"action", "observation", "milestone_reward"}
_ACTION_KEYS = {"kind", "element_id", "text", "direction"}


def action_to_dict(action: Action) -> dict:
    out: dict = {"kind": action.kind.value}
    if action.element_id is not None:
        out["element_id"] = action.element_id
    if action.text is not None:
        out["text"] = action.text
    if action.direction is not None:
        out["direction"] = action.direction.value
    return out


def action_from_dict(data: dict) -> Action:
    if not isinstance(data, dict):
        raise DatasetError(f"action must be an object, got {type(data).__name__}")
    unknown = set(data) - _ACTION_KEYS
    if unknown:
        raise DatasetError(f"unknown action fields: {sorted(unknown)}")
    if "kind" not in data:
        raise DatasetError("action missing 'kind'")
    try:
        kind = ActionKind(data["kind"])
    except ValueError:
        raise DatasetError(f"invalid action kind {data['kind']!r}") from None

    element_id = data.get("element_id")
    if element_id is not None and not isinstance(element_id, int):
        raise DatasetError(f"element_id must be an integer, got {element_id!r}")
    # Source logs sometimes attach an element to ANSWER; normalize it away so
    # the soft-match case analysis stays total.
    if kind is ActionKind.ANSWER:
        element_id = None

    text = data.get("text")
    if text is not None and not isinstance(text, str):
        raise DatasetError(f"text must be a string, got {text!r}")

    direction = data.get("direction")
    if direction is not None:
        try:
            direction = ScrollDirection(direction)
        except ValueError:
            raise DatasetError(f"invalid scroll direction {direction!r}") from None

    return Action(kind=kind, element_id=element_id, text=text, direction=direction)


def step_to_dict(step: Step) -> dict:
    out: dict = {"action": action_to_dict(step.action), "observation": step.observation}
    if step.milestone_reward is not None:
        out["milestone_reward"] = step.milestone_reward
    return out


def step_from_dict(data: dict) -> Step:
    if not isinstance(data, dict):
        raise DatasetError(f"step must be an object, got {type(data).__name__}")
    unknown = set(data) - _STEP_KEYS
    if unknown:
        raise DatasetError(f"unknown step fields: {sorted(unknown)}")
    if "action" not in data:
        raise DatasetError("step missing 'action'")
    observation = data.get("observation", "")
    if not isinstance(observation, str):
        raise DatasetError(f"observation must be a string, got {observation!r}")
    reward = data.get("milestone_reward")
    if reward is not None:
        if isinstance(reward, bool) or not isinstance(reward, (int, float)):
            raise DatasetError(f"milestone_reward must be a number, got {reward!r}")
        reward = float(reward)
    return Step(
        action=action_from_dict(data["action"]),
        observation=observation,
        milestone_reward=reward,
    )


def trajectory_to_dict(trajectory: Trajectory) -> dict:
    return {
        "traj_id": trajectory.traj_id,
        "goal_id": trajectory.goal_id,
        "instruction": trajectory.instruction,
        "success": trajectory.success,
        "steps": [step_to_dict(step) for step in trajectory.steps],
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    if not isinstance(data, dict):
        raise DatasetError(f"trajectory must be an object, got {type(data).__name__}")
    unknown = set(data) - _TRAJECTORY_KEYS
    if unknown:
        raise DatasetError(f"unknown trajectory fields: {sorted(unknown)}")
    missing = _TRAJECTORY_KEYS - set(data)
    if missing:
        raise DatasetError(f"missing trajectory fields: {sorted(missing)}")
    for key in ("traj_id", "goal_id", "instruction"):
        if not isinstance(data[key], str):
            raise DatasetError(f"{key} must be a string, got {data[key]!r}")
    if not isinstance(data["success"], bool):
        raise DatasetError(f"success must be a boolean, got {data['success']!r}")
    if not isinstance(data["steps"], list):
        raise DatasetError("steps must be an array")
    steps = tuple(step_from_dict(item) for item in data["steps"])
    return Trajectory(
        traj_id=data["traj_id"],
        goal_id=data["goal_id"],
        instruction=data["instruction"],
        steps=steps,
        success=data["success"],
    )


def dumps_trajectory(trajectory: Trajectory) -> str:
    return json.dumps(trajectory_to_dict(trajectory), ensure_ascii=False, sort_keys=True)


def write_dataset(path: str | os.PathLike, trajectories: Iterable[Trajectory]) -> None:
    """Write one trajectory per line; rejects duplicate traj_ids up front."""
    items = list(trajectories)
    seen: set[str] = set()
    for trajectory in items:
        if trajectory.traj_id in seen:
            raise DatasetError(f"duplicate traj_id {trajectory.traj_id!r}")
        seen.add(trajectory.traj_id)
    text = "".join(dumps_trajectory(item) + "\n" for item in items)
    from ._util import atomic_write_text

    atomic_write_text(path, text)


def read_dataset(path: str | os.PathLike) -> list[Trajectory]:
    """Read a JSONL dataset, preserving line order.

    Raises DatasetError with the 1-based line number for the first
    malformed line or duplicate traj_id.
    """
    trajectories: list[Trajectory] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", line=line_number) from None
            try:
                trajectory = trajectory_from_dict(data)
            except DatasetError as exc:
                raise DatasetError(str(exc), line=line_number) from None
            if trajectory.traj_id in seen:
                raise DatasetError(
                    f"duplicate traj_id {trajectory.traj_id!r}", line=line_number
                )
            seen.add(trajectory.traj_id)
            trajectories.append(trajectory)
    return trajectories
