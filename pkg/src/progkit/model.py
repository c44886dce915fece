"""Trajectory data model shared by every pipeline stage.

Defines the typed GUI action vocabulary, interaction steps, trajectories,
and per-step progress labels, together with the structural validator.
All types are immutable after construction and safe to share across
threads. Field-combination rules (which optional action fields must be
present for which action kind) are deliberately NOT enforced in the
constructors: malformed combinations must remain representable so that
``validate_trajectory`` can report them as data instead of crashing the
pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class ActionKind(Enum):
    INPUT = "input"
    CLICK = "click"
    LONG_CLICK = "long_click"
    SCROLL = "scroll"
    ANSWER = "answer"
    GOBACK = "goback"
    NOTHING = "nothing"


class ScrollDirection(Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"


OPPOSITE_DIRECTION = {
    ScrollDirection.UP: ScrollDirection.DOWN,
    ScrollDirection.DOWN: ScrollDirection.UP,
    ScrollDirection.LEFT: ScrollDirection.RIGHT,
    ScrollDirection.RIGHT: ScrollDirection.LEFT,
}

# Action kinds whose identity is fully determined by their discrete fields
# (no free-text argument involved in matching).
DISCRETE_KINDS = frozenset(
    {
        ActionKind.CLICK,
        ActionKind.LONG_CLICK,
        ActionKind.SCROLL,
        ActionKind.GOBACK,
    }
)

TEXT_KINDS = frozenset({ActionKind.INPUT, ActionKind.ANSWER})


@dataclass(frozen=True)
class Action:
    """A typed GUI action.

    Which optional fields must be present depends on ``kind``:

    ==========  ==========  =====  ==========
    kind        element_id  text   direction
    ==========  ==========  =====  ==========
    INPUT       required    required  absent
    CLICK       required    absent    absent
    LONG_CLICK  required    absent    absent
    SCROLL      absent      absent    required
    ANSWER      absent      required  absent
    GOBACK      absent      absent    absent
    NOTHING     absent      absent    absent
    ==========  ==========  =====  ==========
    """

    kind: ActionKind
    element_id: Optional[int] = None
    text: Optional[str] = None
    direction: Optional[ScrollDirection] = None

    @classmethod
    def input(cls, element_id: int, text: str) -> "Action":
        return cls(ActionKind.INPUT, element_id=element_id, text=text)

    @classmethod
    def click(cls, element_id: int) -> "Action":
        return cls(ActionKind.CLICK, element_id=element_id)

    @classmethod
    def long_click(cls, element_id: int) -> "Action":
        return cls(ActionKind.LONG_CLICK, element_id=element_id)

    @classmethod
    def scroll(cls, direction: ScrollDirection | str) -> "Action":
        if isinstance(direction, str):
            direction = ScrollDirection(direction)
        return cls(ActionKind.SCROLL, direction=direction)

    @classmethod
    def answer(cls, text: str) -> "Action":
        return cls(ActionKind.ANSWER, text=text)

    @classmethod
    def goback(cls) -> "Action":
        return cls(ActionKind.GOBACK)

    @classmethod
    def nothing(cls) -> "Action":
        return cls(ActionKind.NOTHING)

    def __str__(self) -> str:
        parts = [self.kind.value]
        if self.element_id is not None:
            parts.append(f"el={self.element_id}")
        if self.text is not None:
            parts.append(f"text={self.text!r}")
        if self.direction is not None:
            parts.append(self.direction.value)
        return f"{parts[0]}({', '.join(parts[1:])})"


@dataclass(frozen=True)
class Step:
    """One interaction step: the action taken plus the resulting screen.

    ``observation`` is the textual screen representation after the action
    executed (may be empty). ``milestone_reward`` is present only when the
    source environment emitted an intermediate reward for this step.
    """

    action: Action
    observation: str = ""
    milestone_reward: Optional[float] = None


@dataclass(frozen=True)
class Trajectory:
    """One complete episode for a task goal."""

    traj_id: str
    goal_id: str
    instruction: str
    steps: tuple[Step, ...]
    success: bool

    def __post_init__(self) -> None:
        if not isinstance(self.steps, tuple):
            object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def actions(self) -> tuple[Action, ...]:
        return tuple(step.action for step in self.steps)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class LabeledStep:
    """Progress annotation for a single step.

    ``recipe_position`` is the 1-based position within the matched recipe
    (or milestone schedule) and is present exactly when ``is_key``.
    """

    step_index: int
    progress: float
    is_key: bool
    recipe_position: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.progress <= 1.0:
            raise ValueError(f"progress {self.progress} outside [0, 1]")
        if self.is_key and self.recipe_position is None:
            raise ValueError("key step requires recipe_position")
        if not self.is_key and self.recipe_position is not None:
            raise ValueError("non-key step must not carry recipe_position")
        if self.recipe_position is not None and self.recipe_position < 1:
            raise ValueError("recipe_position is 1-based")


@dataclass(frozen=True)
class Violation:
    """One validator finding; ``step_index`` is None for trajectory-level issues."""

    step_index: Optional[int]
    field: str
    message: str

    def __str__(self) -> str:
        where = "trajectory" if self.step_index is None else f"step {self.step_index}"
        return f"{where}: {self.field}: {self.message}"


# Required/forbidden optional fields per action kind.
_FIELD_RULES: dict[ActionKind, tuple[bool, bool, bool]] = {
    # kind: (element_id, text, direction) -- True means required, False forbidden
    ActionKind.INPUT: (True, True, False),
    ActionKind.CLICK: (True, False, False),
    ActionKind.LONG_CLICK: (True, False, False),
    ActionKind.SCROLL: (False, False, True),
    ActionKind.ANSWER: (False, True, False),
    ActionKind.GOBACK: (False, False, False),
    ActionKind.NOTHING: (False, False, False),
}


def validate_action(action: Action, step_index: Optional[int] = None) -> list[Violation]:
    """Check the field-presence rules for a single action."""
    violations: list[Violation] = []
    need_element, need_text, need_direction = _FIELD_RULES[action.kind]

    def check(name: str, value: object, required: bool) -> None:
        if required and value is None:
            violations.append(
                Violation(step_index, name, f"required for {action.kind.value}")
            )
        if not required and value is not None:
            violations.append(
                Violation(step_index, name, f"forbidden for {action.kind.value}")
            )

    check("element_id", action.element_id, need_element)
    check("text", action.text, need_text)
    check("direction", action.direction, need_direction)

    if action.element_id is not None and action.element_id < 0:
        violations.append(Violation(step_index, "element_id", "must be non-negative"))
    if action.text is not None and not action.text.strip():
        violations.append(
            Violation(step_index, "text", "empty after trimming whitespace")
        )
    return violations


def validate_trajectory(trajectory: Trajectory) -> list[Violation]:
    """Return all invariant violations; an empty list means the trajectory is valid.

    Violations are data, not failures: callers decide whether to reject.
    """
    violations: list[Violation] = []
    if not trajectory.traj_id:
        violations.append(Violation(None, "traj_id", "empty"))
    if not trajectory.goal_id:
        violations.append(Violation(None, "goal_id", "empty"))
    if not trajectory.steps:
        violations.append(Violation(None, "steps", "steps empty"))
    for index, step in enumerate(trajectory.steps):
        violations.extend(validate_action(step.action, index))
        reward = step.milestone_reward
        if reward is not None:
            if not math.isfinite(reward):
                violations.append(
                    Violation(index, "milestone_reward", "must be finite")
                )
            elif reward < 0:
                violations.append(
                    Violation(index, "milestone_reward", "must be non-negative")
                )
    return violations


def milestone_step_indices(trajectory: Trajectory) -> list[int]:
    """Indices of steps that received a (strictly positive) milestone reward."""
    return [
        index
        for index, step in enumerate(trajectory.steps)
        if step.milestone_reward is not None and step.milestone_reward > 0
    ]
