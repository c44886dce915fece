"""Recipe library construction: group successful trajectories per goal and
extract each group's common action subsequence.

Grouping is greedy complete-linkage: trajectories are visited in traj_id
order and joined to the first group whose every member is at least
``theta`` similar, so the advertised pairwise guarantee holds by
construction. Extraction folds each group's action sequences (again in
traj_id order) through the pairwise soft LCS.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ._util import atomic_write_text, parallel_map
from .dataset import action_from_dict, action_to_dict
from .model import Action, Trajectory
from .softlcs import NOTHING_MATCH_WEIGHT, fold_lcs, similarity
from .textsim import TOKEN_COSINE_ID, TextSimilarityFn, token_cosine

#: Minimum pairwise similarity for two trajectories to share a group.
DEFAULT_GROUP_THRESHOLD = 0.6

LIBRARY_SCHEMA = "progkit-recipe-library/1"


class RecipeError(Exception):
    pass


class EmptyRecipeError(RecipeError):
    """Folding a group produced no common actions; the group is reported."""

    def __init__(self, traj_ids: Sequence[str]):
        self.traj_ids = list(traj_ids)
        super().__init__(f"empty recipe for group {self.traj_ids}")


@dataclass(frozen=True)
class LibraryConfig:
    """Constants a library was built with, persisted for auditability."""

    theta: float = DEFAULT_GROUP_THRESHOLD
    epsilon: float = NOTHING_MATCH_WEIGHT
    text_sim: str = TOKEN_COSINE_ID

    def to_dict(self) -> dict:
        return {"theta": self.theta, "epsilon": self.epsilon, "text_sim": self.text_sim}

    @classmethod
    def from_dict(cls, data: dict) -> "LibraryConfig":
        return cls(
            theta=float(data["theta"]),
            epsilon=float(data["epsilon"]),
            text_sim=str(data["text_sim"]),
        )

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Recipe:
    recipe_id: str
    goal_id: str
    actions: tuple[Action, ...]
    source_traj_ids: tuple[str, ...]
    group_size: int

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class RecipeLibrary:
    goals: dict[str, tuple[Recipe, ...]] = field(default_factory=dict)
    config: LibraryConfig = field(default_factory=LibraryConfig)

    def recipes_for(self, goal_id: str) -> tuple[Recipe, ...]:
        return self.goals.get(goal_id, ())

    def __len__(self) -> int:
        return sum(len(recipes) for recipes in self.goals.values())


def group_trajectories(
    successes: Sequence[Trajectory],
    theta: float = DEFAULT_GROUP_THRESHOLD,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
    threads: int = 1,
) -> list[list[str]]:
    """Partition same-goal successful trajectories into complete-linkage groups.

    Returns lists of traj_ids; every pair within a returned group has
    similarity >= theta.
    """
    if not successes:
        return []
    goals = {t.goal_id for t in successes}
    if len(goals) > 1:
        raise ValueError(f"grouping expects a single goal, got {sorted(goals)}")
    if any(not t.success for t in successes):
        raise ValueError("grouping expects successful trajectories only")

    ordered = sorted(successes, key=lambda t: t.traj_id)
    pairs = [
        (i, j) for i in range(len(ordered)) for j in range(i + 1, len(ordered))
    ]
    scores = parallel_map(
        lambda ij: similarity(ordered[ij[0]], ordered[ij[1]], ts, epsilon),
        pairs,
        threads=threads,
    )
    sim = {pair: score for pair, score in zip(pairs, scores)}

    groups: list[list[int]] = []
    for index in range(len(ordered)):
        for group in groups:
            if all(sim[(member, index)] >= theta for member in group):
                group.append(index)
                break
        else:
            groups.append([index])
    return [[ordered[i].traj_id for i in group] for group in groups]


def _default_recipe_id(goal_id: str, source_ids: Sequence[str]) -> str:
    digest = hashlib.sha256("|".join(sorted(source_ids)).encode("utf-8"))
    return f"{goal_id}/{digest.hexdigest()[:10]}"


def extract_recipe(
    group: Sequence[Trajectory],
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
    recipe_id: str | None = None,
) -> Recipe:
    """Fold a group (in traj_id order) into its recipe."""
    if not group:
        raise ValueError("cannot extract a recipe from an empty group")
    ordered = sorted(group, key=lambda t: t.traj_id)
    ids = tuple(t.traj_id for t in ordered)
    actions = fold_lcs([t.actions for t in ordered], ts, epsilon)
    if not actions:
        raise EmptyRecipeError(ids)
    return Recipe(
        recipe_id=recipe_id or _default_recipe_id(ordered[0].goal_id, ids),
        goal_id=ordered[0].goal_id,
        actions=tuple(actions),
        source_traj_ids=ids,
        group_size=len(ids),
    )


def build_library(
    dataset: Iterable[Trajectory],
    theta: float = DEFAULT_GROUP_THRESHOLD,
    ts: TextSimilarityFn = token_cosine,
    epsilon: float = NOTHING_MATCH_WEIGHT,
    text_sim_id: str = TOKEN_COSINE_ID,
    threads: int = 1,
) -> RecipeLibrary:
    """Build the per-goal recipe library from the dataset's successes."""
    per_goal: dict[str, list[Trajectory]] = {}
    for trajectory in dataset:
        if trajectory.success:
            per_goal.setdefault(trajectory.goal_id, []).append(trajectory)

    config = LibraryConfig(theta=theta, epsilon=epsilon, text_sim=text_sim_id)
    library = RecipeLibrary(config=config)
    for goal_id in sorted(per_goal):
        successes = per_goal[goal_id]
        by_id = {t.traj_id: t for t in successes}
        recipes = []
        for group_ids in group_trajectories(successes, theta, ts, epsilon, threads):
            recipes.append(extract_recipe([by_id[i] for i in group_ids], ts, epsilon))
        recipes.sort(key=lambda r: (-r.group_size, r.recipe_id))
        library.goals[goal_id] = tuple(recipes)
    return library


def _recipe_to_dict(recipe: Recipe) -> dict:
    return {
        "recipe_id": recipe.recipe_id,
        "goal_id": recipe.goal_id,
        "actions": [action_to_dict(a) for a in recipe.actions],
        "source_traj_ids": list(recipe.source_traj_ids),
        "group_size": recipe.group_size,
    }


def _recipe_from_dict(data: dict) -> Recipe:
    return Recipe(
        recipe_id=data["recipe_id"],
        goal_id=data["goal_id"],
        actions=tuple(action_from_dict(a) for a in data["actions"]),
        source_traj_ids=tuple(data["source_traj_ids"]),
        group_size=int(data["group_size"]),
    )


def save_library(path: str | os.PathLike, library: RecipeLibrary) -> None:
    payload = {
        "schema": LIBRARY_SCHEMA,
        "config": library.config.to_dict(),
        "goals": {
            goal_id: [_recipe_to_dict(r) for r in recipes]
            for goal_id, recipes in sorted(library.goals.items())
        },
    }
    atomic_write_text(
        path, json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=1) + "\n"
    )


def load_library(
    path: str | os.PathLike, expected: LibraryConfig | None = None
) -> RecipeLibrary:
    """Load a library; warns when the stored config differs from ``expected``."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    schema = payload.get("schema")
    if schema != LIBRARY_SCHEMA:
        raise RecipeError(f"unsupported library schema {schema!r}")
    config = LibraryConfig.from_dict(payload["config"])
    if expected is not None and config != expected:
        warnings.warn(
            f"library was built with {config.to_dict()}, "
            f"current config is {expected.to_dict()}",
            stacklevel=2,
        )
    library = RecipeLibrary(config=config)
    for goal_id, recipes in payload["goals"].items():
        library.goals[goal_id] = tuple(_recipe_from_dict(r) for r in recipes)
    return library
