"""Synthetic milestone environment with scripted agents.

Each task carries one to three ground-truth action sequences (cores);
every core step pays a milestone reward, so the environment's milestone
schedule is a perfect progress oracle. Scripted agents replay a core
exactly, pad it with distractors, abandon it partway, or wander, which
yields corpora whose true key steps are known and can be compared
against what the recipe-mining pipeline recovers.

Cores of one task never share actions (disjoint click targets), so
alternative policies for the same goal stay dissimilar and are mined
into separate recipes.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from ._util import atomic_write_text, derive_seed
from .model import Action, Step, Trajectory
from .recipes import DEFAULT_GROUP_THRESHOLD
from .softlcs import classic_lcs_len, soft_lcs

_WORDS = (
    "album", "anchor", "badge", "banner", "basket", "beacon", "bridge",
    "button", "cabinet", "camera", "canvas", "carousel", "compass",
    "console", "cursor", "dialog", "drawer", "editor", "folder", "gallery",
    "garden", "harbor", "inbox", "journal", "keypad", "ladder", "lantern",
    "ledger", "locker", "marker", "mirror", "module", "notebook", "orbit",
    "palette", "panel", "pencil", "playlist", "pocket", "portal", "printer",
    "prism", "profile", "receipt", "ribbon", "rocket", "roster", "satchel",
    "scanner", "shelf", "signal", "sketch", "slider", "socket", "stamp",
    "switch", "tablet", "ticket", "toolbar", "tunnel", "vault", "wallet",
    "widget", "window",
)

_CORE_ELEMENT_BASE = 100
_CORE_ELEMENT_STRIDE = 30
_DISTRACTOR_ELEMENT_BASE = 500


class SimenvError(Exception):
    pass


class PolicyKind(enum.Enum):
    OPTIMAL = "optimal"
    NOISY = "noisy"
    EARLY_STOP = "early-stop"
    RANDOM = "random"


@dataclass(frozen=True)
class AgentPolicy:
    kind: PolicyKind
    noise_rate: float = 0.0
    stop_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError(f"noise_rate {self.noise_rate} outside [0, 1)")
        if not 0.0 < self.stop_fraction <= 1.0:
            raise ValueError(f"stop_fraction {self.stop_fraction} outside (0, 1]")


@dataclass(frozen=True)
class TaskGenConfig:
    min_length: int = 4
    max_length: int = 10
    min_recipes: int = 1
    max_recipes: int = 3
    distractor_pool_size: int = 32
    max_attempts: int = 50

    def __post_init__(self):
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")
        if not 1 <= self.min_recipes <= self.max_recipes <= 3:
            raise ValueError("need 1 <= min_recipes <= max_recipes <= 3")
        if self.distractor_pool_size < 1:
            raise ValueError("distractor pool must be non-empty")


@dataclass(frozen=True)
class TaskSpec:
    goal_id: str
    instruction: str
    core_recipes: tuple[tuple[Action, ...], ...]
    milestone_positions: tuple[tuple[int, ...], ...]
    distractor_action_pool: tuple[Action, ...]
    milestone_words: tuple[str, ...]

    @property
    def core_length(self) -> int:
        return len(self.core_recipes[0])


def _observation(task: TaskSpec, reached: int) -> str:
    length = len(task.milestone_words)
    tokens = ["screen", "of", task.goal_id]
    tokens.extend(task.milestone_words[:reached])
    tokens.extend(f"blank{i}" for i in range(reached, length))
    return " ".join(tokens)


def _check_task(task: TaskSpec, theta: float) -> bool:
    cores = task.core_recipes
    for i in range(len(cores)):
        for j in range(i + 1, len(cores)):
            length = min(len(cores[i]), len(cores[j]))
            if classic_lcs_len(cores[i], cores[j]) >= length:
                return False
            if soft_lcs(cores[i], cores[j]) / length >= theta:
                return False
    return True


def generate_tasks(
    n: int, seed: int, cfg: TaskGenConfig = TaskGenConfig()
) -> list[TaskSpec]:
    """Deterministically generate ``n`` task specifications.

    Every core of a task has the same length (one milestone schedule per
    goal), and cores use disjoint click targets so their pairwise
    similarity stays below the grouping threshold; that property is
    still re-checked, with bounded regeneration on failure.
    """
    if n < 1:
        raise SimenvError(f"need at least one task, got {n}")
    tasks = []
    for index in range(n):
        goal_id = f"task{index:03d}"
        for attempt in range(cfg.max_attempts):
            rng = random.Random(derive_seed(seed, "task", index, attempt))
            length = rng.randint(cfg.min_length, cfg.max_length)
            recipe_count = rng.randint(cfg.min_recipes, cfg.max_recipes)
            words = tuple(rng.sample(_WORDS, length))
            cores = tuple(
                tuple(
                    Action.click(
                        _CORE_ELEMENT_BASE + r * _CORE_ELEMENT_STRIDE + p
                    )
                    for p in range(length)
                )
                for r in range(recipe_count)
            )
            pool = tuple(
                Action.click(_DISTRACTOR_ELEMENT_BASE + i)
                for i in range(cfg.distractor_pool_size)
            )
            task = TaskSpec(
                goal_id=goal_id,
                instruction=(
                    f"complete {goal_id} by reaching " + " then ".join(words)
                ),
                core_recipes=cores,
                milestone_positions=tuple(
                    tuple(range(length)) for _ in range(recipe_count)
                ),
                distractor_action_pool=pool,
                milestone_words=words,
            )
            if _check_task(task, DEFAULT_GROUP_THRESHOLD):
                tasks.append(task)
                break
        else:
            raise SimenvError(
                f"could not generate distinct cores for {goal_id} "
                f"after {cfg.max_attempts} attempts"
            )
    return tasks


@dataclass(frozen=True)
class TruthRow:
    traj_id: str
    step_index: int
    true_progress: float
    is_key: bool


def _execute(
    task: TaskSpec, actions: Sequence[Action]
) -> tuple[list[Step], list[tuple[float, bool]]]:
    """Run actions through the milestone environment.

    A per-core pointer tracks how much of each core has been executed in
    order; a milestone fires whenever the best pointer advances past its
    previous maximum.
    """
    length = task.core_length
    pointers = [0] * len(task.core_recipes)
    best = 0
    steps: list[Step] = []
    truth: list[tuple[float, bool]] = []
    for action in actions:
        for r, core in enumerate(task.core_recipes):
            if pointers[r] < len(core) and action == core[pointers[r]]:
                pointers[r] += 1
        reached = max(pointers)
        fired = reached > best
        best = reached
        steps.append(
            Step(
                action=action,
                observation=_observation(task, reached),
                milestone_reward=1.0 if fired else None,
            )
        )
        truth.append((reached / length, fired))
    return steps, truth


def _plan_actions(
    task: TaskSpec, policy: AgentPolicy, rng: random.Random
) -> tuple[list[Action], bool]:
    cores = task.core_recipes
    pool = task.distractor_action_pool
    if policy.kind is PolicyKind.OPTIMAL:
        return list(rng.choice(cores)), True
    if policy.kind is PolicyKind.NOISY:
        actions: list[Action] = []
        for action in rng.choice(cores):
            while rng.random() < policy.noise_rate:
                actions.append(rng.choice(pool))
            actions.append(action)
        return actions, True
    if policy.kind is PolicyKind.EARLY_STOP:
        core = rng.choice(cores)
        kept = math.floor(policy.stop_fraction * len(core))
        if kept == 0:
            return [Action.nothing()], False
        return list(core[:kept]), False
    return [rng.choice(pool) for _ in range(task.core_length)], False


def _run_agent_full(
    task: TaskSpec, policy: AgentPolicy, seed: int, traj_id: str | None = None
) -> tuple[Trajectory, list[tuple[float, bool]]]:
    rng = random.Random(seed)
    actions, success = _plan_actions(task, policy, rng)
    steps, truth = _execute(task, actions)
    trajectory = Trajectory(
        traj_id=traj_id or f"{task.goal_id}-{policy.kind.value}",
        goal_id=task.goal_id,
        instruction=task.instruction,
        steps=tuple(steps),
        success=success,
    )
    return trajectory, truth


def run_agent(task: TaskSpec, policy: AgentPolicy, seed: int) -> Trajectory:
    return _run_agent_full(task, policy, seed)[0]


def _allocate(mix: Sequence[tuple[AgentPolicy, float]], count: int) -> list[int]:
    """Largest-remainder allocation of ``count`` slots to the mix weights."""
    shares = [weight * count for _, weight in mix]
    allocation = [math.floor(s) for s in shares]
    short = count - sum(allocation)
    order = sorted(
        range(len(mix)), key=lambda i: (allocation[i] - shares[i], i)
    )
    for i in order[:short]:
        allocation[i] += 1
    return allocation


def generate_corpus(
    tasks: Sequence[TaskSpec],
    mix: Mapping[AgentPolicy, float],
    per_task_count: int,
    seed: int,
) -> tuple[list[Trajectory], list[TruthRow]]:
    """Roll out ``per_task_count`` agents per task and keep the true labels.

    The true progress of a step is reached-milestones / schedule-length
    at that step, with key steps exactly where milestones fired.
    """
    if not tasks:
        raise SimenvError("need at least one task")
    if per_task_count < 1:
        raise SimenvError(f"per_task_count must be >= 1, got {per_task_count}")
    entries = list(mix.items())
    if not entries or any(weight < 0 for _, weight in entries):
        raise SimenvError("mix weights must be non-negative and non-empty")
    total = sum(weight for _, weight in entries)
    if abs(total - 1.0) > 1e-9:
        raise SimenvError(f"mix weights must sum to 1, got {total}")

    dataset: list[Trajectory] = []
    truth_rows: list[TruthRow] = []
    for task in tasks:
        allocation = _allocate(entries, per_task_count)
        serial = 0
        for (policy, _), slots in zip(entries, allocation):
            for _ in range(slots):
                traj_id = f"{task.goal_id}-{serial:03d}-{policy.kind.value}"
                trajectory, truth = _run_agent_full(
                    task,
                    policy,
                    derive_seed(seed, task.goal_id, serial),
                    traj_id=traj_id,
                )
                dataset.append(trajectory)
                truth_rows.extend(
                    TruthRow(traj_id, index, progress, fired)
                    for index, (progress, fired) in enumerate(truth)
                )
                serial += 1
    dataset.sort(key=lambda t: t.traj_id)
    truth_rows.sort(key=lambda r: (r.traj_id, r.step_index))
    return dataset, truth_rows


def write_truth(path: str | os.PathLike, rows: Sequence[TruthRow]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["traj_id", "step_index", "true_progress", "is_key"])
    for row in rows:
        writer.writerow(
            [
                row.traj_id,
                row.step_index,
                repr(row.true_progress),
                "true" if row.is_key else "false",
            ]
        )
    atomic_write_text(path, buffer.getvalue())


def read_truth(path: str | os.PathLike) -> list[TruthRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        expected = ["traj_id", "step_index", "true_progress", "is_key"]
        if reader.fieldnames != expected:
            raise SimenvError(
                f"truth table columns {reader.fieldnames} != {expected}"
            )
        for record in reader:
            rows.append(
                TruthRow(
                    traj_id=record["traj_id"],
                    step_index=int(record["step_index"]),
                    true_progress=float(record["true_progress"]),
                    is_key=record["is_key"] == "true",
                )
            )
    return rows
