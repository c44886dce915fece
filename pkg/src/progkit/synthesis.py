"""Training-data synthesis and step-ratio balancing.

Failed trajectories come from two generators: pairing a goal's
instruction with another goal's action trace (mismatch), and sampling a
random walk over the action space. Successful trajectories are varied by
stripping NOTHING steps and splicing in effectless action tuples. The
balancer mixes these until the success-to-failure step ratio lands
within 10% of the configured target.
"""

from __future__ import annotations

import csv
import io
import os
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ._util import atomic_write_text, derive_seed
from .model import (
    OPPOSITE_DIRECTION,
    Action,
    ActionKind,
    ScrollDirection,
    Step,
    Trajectory,
)

EFFECTLESS_PATTERNS = ("nothing", "scroll-pair", "goback-repeat")

_SAMPLER_WORDS = (
    "settings", "profile", "search", "open", "menu", "save",
    "list", "photo", "message", "done",
)

ActionSampler = Callable[[random.Random], Action]


class SynthesisError(Exception):
    pass


class BalanceError(SynthesisError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    seed: int = 0
    target_success_fail_step_ratio: float = 1.0
    max_insertions: int = 3
    min_insertions: int = 0
    effectless_patterns: tuple[str, ...] = EFFECTLESS_PATTERNS
    mismatch_fraction: float = 0.5
    max_balance_rounds: int = 10_000

    def __post_init__(self):
        if isinstance(self.effectless_patterns, list):
            object.__setattr__(
                self, "effectless_patterns", tuple(self.effectless_patterns)
            )
        if self.target_success_fail_step_ratio <= 0:
            raise ValueError("target step ratio must be positive")
        if not 0 <= self.min_insertions <= self.max_insertions:
            raise ValueError("need 0 <= min_insertions <= max_insertions")
        if not 0.0 <= self.mismatch_fraction <= 1.0:
            raise ValueError("mismatch_fraction must be within [0, 1]")
        unknown = set(self.effectless_patterns) - set(EFFECTLESS_PATTERNS)
        if unknown:
            raise ValueError(f"unknown effectless patterns: {sorted(unknown)}")
        if not self.effectless_patterns:
            raise ValueError("at least one effectless pattern is required")


def default_action_sampler(rng: random.Random) -> Action:
    """Uniform draw over action kinds with valid per-kind payloads."""
    kind = rng.choice(list(ActionKind))
    if kind in (ActionKind.CLICK, ActionKind.LONG_CLICK):
        return Action(kind, element_id=rng.randrange(10))
    if kind is ActionKind.INPUT:
        return Action.input(rng.randrange(10), rng.choice(_SAMPLER_WORDS))
    if kind is ActionKind.SCROLL:
        return Action.scroll(rng.choice(list(ScrollDirection)))
    if kind is ActionKind.ANSWER:
        return Action.answer(rng.choice(_SAMPLER_WORDS))
    if kind is ActionKind.GOBACK:
        return Action.goback()
    return Action.nothing()


def synth_failed_mismatch(
    goal: tuple[str, str],
    donor: Trajectory,
    rng: random.Random | None = None,
    traj_id: str | None = None,
) -> Trajectory:
    """Attach ``goal``'s instruction to ``donor``'s action trace.

    The donor's milestone rewards are goal-specific and therefore
    stripped. ``rng`` is accepted for interface uniformity; the
    construction itself is deterministic.
    """
    goal_id, instruction = goal
    if donor.goal_id == goal_id:
        raise SynthesisError(
            f"mismatch synthesis needs a donor from a different goal, "
            f"both are {goal_id!r}"
        )
    steps = tuple(
        Step(action=s.action, observation=s.observation) for s in donor.steps
    )
    return Trajectory(
        traj_id=traj_id or f"mismatch-{goal_id}+{donor.traj_id}",
        goal_id=goal_id,
        instruction=instruction,
        steps=steps,
        success=False,
    )


def synth_failed_randomwalk(
    sampler: ActionSampler,
    length: int,
    rng: random.Random,
    goal: tuple[str, str] = ("randomwalk", "wander aimlessly"),
    traj_id: str | None = None,
) -> Trajectory:
    if length < 1:
        raise SynthesisError(f"random walk length must be >= 1, got {length}")
    goal_id, instruction = goal
    steps = tuple(
        Step(action=sampler(rng), observation="") for _ in range(length)
    )
    return Trajectory(
        traj_id=traj_id or f"randomwalk-{goal_id}",
        goal_id=goal_id,
        instruction=instruction,
        steps=steps,
        success=False,
    )


def _effectless_steps(
    pattern: str, previous: Step | None, rng: random.Random
) -> list[Step]:
    observation = previous.observation if previous is not None else ""
    if pattern == "goback-repeat" and previous is None:
        pattern = "nothing"
    if pattern == "nothing":
        actions = [Action.nothing()]
    elif pattern == "scroll-pair":
        direction = rng.choice(list(ScrollDirection))
        actions = [Action.scroll(direction), Action.scroll(OPPOSITE_DIRECTION[direction])]
    elif pattern == "goback-repeat":
        actions = [Action.goback(), previous.action]
    else:
        raise SynthesisError(f"unknown effectless pattern {pattern!r}")
    return [Step(action=a, observation=observation) for a in actions]


def synth_success_variant(
    prototype: Trajectory,
    rng: random.Random,
    cfg: SynthesisConfig,
    traj_id: str | None = None,
) -> Trajectory:
    """Equivalent successful execution: drop the prototype's NOTHING steps,
    then splice in randomly placed effectless tuples. Inserted steps reuse
    the preceding step's observation and carry no milestone reward."""
    if not prototype.success:
        raise SynthesisError(
            f"variant synthesis needs a successful prototype, "
            f"{prototype.traj_id!r} failed"
        )
    steps = [s for s in prototype.steps if s.action.kind is not ActionKind.NOTHING]
    insertions = rng.randint(cfg.min_insertions, cfg.max_insertions)
    for _ in range(insertions):
        slot = rng.randint(0, len(steps))
        previous = steps[slot - 1] if slot > 0 else None
        pattern = rng.choice(cfg.effectless_patterns)
        steps[slot:slot] = _effectless_steps(pattern, previous, rng)
    return Trajectory(
        traj_id=traj_id or f"variant-{prototype.traj_id}",
        goal_id=prototype.goal_id,
        instruction=prototype.instruction,
        steps=tuple(steps),
        success=True,
    )


@dataclass(frozen=True)
class BalanceRow:
    source: str
    success: bool
    count_trajectories: int
    count_steps: int


@dataclass
class _Pool:
    """Mutable bookkeeping for one balancing run."""

    trajectories: list[Trajectory] = field(default_factory=list)
    success_steps: int = 0
    fail_steps: int = 0

    def add(self, trajectory: Trajectory) -> None:
        self.trajectories.append(trajectory)
        if trajectory.success:
            self.success_steps += len(trajectory)
        else:
            self.fail_steps += len(trajectory)


def _within_band(success_steps: int, fail_steps: int, target: float) -> bool:
    if fail_steps == 0:
        return False
    ratio = success_steps / fail_steps
    return 0.9 * target <= ratio <= 1.1 * target


def balance_dataset(
    real: Sequence[Trajectory],
    cfg: SynthesisConfig,
    sampler: ActionSampler = default_action_sampler,
) -> tuple[list[Trajectory], list[BalanceRow]]:
    """Top up the dataset with synthesized trajectories until the
    success:failure step ratio is within 10% of the configured target.

    Returns the combined dataset (real trajectories first, in input
    order) and per-source count rows.
    """
    if not real:
        raise BalanceError("cannot balance an empty dataset")

    pool = _Pool()
    for trajectory in real:
        pool.add(trajectory)

    instructions: dict[str, str] = {}
    for trajectory in real:
        instructions.setdefault(trajectory.goal_id, trajectory.instruction)
    goals = sorted(instructions)
    successes = [t for t in real if t.success]
    fail_lengths = sorted(len(t) for t in real if not t.success and len(t) > 0)
    if not fail_lengths:
        fail_lengths = sorted(len(t) for t in real if len(t) > 0) or [1]

    counts: dict[tuple[str, bool], list[int]] = {}

    def tally(source: str, trajectory: Trajectory) -> None:
        entry = counts.setdefault((source, trajectory.success), [0, 0])
        entry[0] += 1
        entry[1] += len(trajectory)

    for trajectory in real:
        tally("real", trajectory)

    target = cfg.target_success_fail_step_ratio
    rounds = 0
    while not _within_band(pool.success_steps, pool.fail_steps, target):
        if rounds >= cfg.max_balance_rounds:
            raise BalanceError(
                f"no balance after {rounds} rounds: "
                f"{pool.success_steps} success steps vs {pool.fail_steps} "
                f"failure steps, target ratio {target}"
            )
        rng = random.Random(derive_seed(cfg.seed, "balance", rounds))
        ratio = (
            float("inf")
            if pool.fail_steps == 0
            else pool.success_steps / pool.fail_steps
        )
        if ratio > 1.1 * target:
            use_mismatch = len(goals) > 1 and rng.random() < cfg.mismatch_fraction
            if use_mismatch:
                goal_id = rng.choice(goals)
                donors = [t for t in real if t.goal_id != goal_id and len(t) > 0]
                use_mismatch = bool(donors)
            if use_mismatch:
                donor = rng.choice(donors)
                synthesized = synth_failed_mismatch(
                    (goal_id, instructions[goal_id]),
                    donor,
                    traj_id=f"mismatch-{rounds:05d}-{goal_id}+{donor.traj_id}",
                )
                tally("mismatch", synthesized)
            else:
                goal_id = rng.choice(goals)
                synthesized = synth_failed_randomwalk(
                    sampler,
                    rng.choice(fail_lengths),
                    rng,
                    goal=(goal_id, instructions[goal_id]),
                    traj_id=f"randomwalk-{rounds:05d}-{goal_id}",
                )
                tally("randomwalk", synthesized)
        else:
            if not successes:
                raise BalanceError(
                    "failure steps dominate but there is no successful "
                    "trajectory to synthesize variants from"
                )
            prototype = rng.choice(successes)
            synthesized = synth_success_variant(
                prototype,
                rng,
                cfg,
                traj_id=f"variant-{rounds:05d}-{prototype.traj_id}",
            )
            if len(synthesized) == 0:
                synthesized = None
            if synthesized is not None:
                tally("variant", synthesized)
        if synthesized is not None:
            pool.add(synthesized)
        rounds += 1

    rows = [
        BalanceRow(
            source=source,
            success=success,
            count_trajectories=entry[0],
            count_steps=entry[1],
        )
        for (source, success), entry in sorted(counts.items())
    ]
    return pool.trajectories, rows


def write_balance_report(path: str | os.PathLike, rows: Sequence[BalanceRow]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["source", "success", "count_trajectories", "count_steps"])
    for row in rows:
        writer.writerow(
            [
                row.source,
                "true" if row.success else "false",
                row.count_trajectories,
                row.count_steps,
            ]
        )
    atomic_write_text(path, buffer.getvalue())
