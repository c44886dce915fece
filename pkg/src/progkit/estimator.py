"""Desk-scale progress estimator.

A generalized linear model over hand-designed features of
(instruction, action history, current observation), trained with binary
cross-entropy against progress labels. The remote-scorer client speaks
the same contract over HTTP so a heavyweight model can be swapped in
behind the identical interface.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import requests

from ._util import atomic_write_text, derive_seed, parallel_map
from .dataset import action_to_dict
from .model import Action, ActionKind, Trajectory

FEATURE_SCHEMA = "progress-features/1"
MODEL_SCHEMA = "progress-glm/1"

FEATURE_NAMES = (
    "history_length",
    "count_input",
    "count_click",
    "count_long_click",
    "count_scroll",
    "count_answer",
    "count_goback",
    "count_nothing",
    "distinct_elements",
    "instruction_observation_overlap",
    "instruction_entered_text_overlap",
    "last_action_is_nothing",
    "repetition",
)

_KIND_ORDER = tuple(ActionKind)

#: Prediction clamp used on the training/loss path to keep log() finite.
_PROB_FLOOR = 1e-7

DEFAULT_SUCCESS_THRESHOLD = 0.5


class EstimatorError(Exception):
    pass


class RemoteScoreError(EstimatorError):
    """Base for remote-scorer client failures."""


class RemoteTimeout(RemoteScoreError):
    pass


class RemoteHTTPError(RemoteScoreError):
    pass


class RemoteProtocolError(RemoteScoreError):
    pass


class RemoteRangeError(RemoteScoreError):
    pass


@dataclass(frozen=True)
class StateView:
    """What the estimator sees at one step: the goal instruction, every
    action taken before this step, and the current screen text."""

    instruction: str
    action_history: tuple[Action, ...]
    observation: str

    def __post_init__(self):
        if isinstance(self.action_history, list):
            object.__setattr__(self, "action_history", tuple(self.action_history))


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_version: str = FEATURE_SCHEMA

    def __post_init__(self):
        if isinstance(self.values, list):
            object.__setattr__(self, "values", tuple(self.values))
        if self.schema_version == FEATURE_SCHEMA and len(self.values) != len(FEATURE_NAMES):
            raise ValueError(
                f"expected {len(FEATURE_NAMES)} features, got {len(self.values)}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")


@dataclass(frozen=True)
class ProgressModel:
    weights: tuple[float, ...]
    bias: float
    schema_version: str = FEATURE_SCHEMA
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.weights, list):
            object.__setattr__(self, "weights", tuple(self.weights))
        if not all(math.isfinite(w) for w in self.weights) or not math.isfinite(self.bias):
            raise ValueError("model parameters must be finite")

    @classmethod
    def initial(cls) -> "ProgressModel":
        return cls(weights=(0.0,) * len(FEATURE_NAMES), bias=0.0)


def state_view(trajectory: Trajectory, step_index: int) -> StateView:
    """State at ``step_index``: history strictly before it, that step's screen."""
    if not 0 <= step_index < len(trajectory):
        raise IndexError(f"step_index {step_index} out of range")
    return StateView(
        instruction=trajectory.instruction,
        action_history=trajectory.actions[:step_index],
        observation=trajectory.steps[step_index].observation,
    )


def initial_state_view(trajectory: Trajectory) -> StateView:
    """Pre-episode state: nothing done yet, no screen seen."""
    return StateView(
        instruction=trajectory.instruction, action_history=(), observation=""
    )


def _tokens(text: str) -> set[str]:
    return {t for t in re.split(r"[^a-z0-9]+", text.lower()) if t}


def token_overlap(a: str, b: str) -> float:
    """Shared fraction of the smaller token set; 0 when either is empty."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / min(len(ta), len(tb))


def featurize(sv: StateView) -> FeatureVector:
    history = sv.action_history
    h = len(history)

    counts = {kind: 0 for kind in _KIND_ORDER}
    elements = set()
    entered: list[str] = []
    for action in history:
        counts[action.kind] += 1
        if action.element_id is not None:
            elements.add(action.element_id)
        if action.kind in (ActionKind.INPUT, ActionKind.ANSWER) and action.text:
            entered.append(action.text)

    max_run = 0
    run = 0
    previous = None
    for action in history:
        run = run + 1 if action == previous else 1
        previous = action
        max_run = max(max_run, run)

    values = [h / (1.0 + h)]
    values.extend(float(counts[kind]) for kind in _KIND_ORDER)
    values.append(float(len(elements)))
    values.append(token_overlap(sv.instruction, sv.observation))
    values.append(token_overlap(sv.instruction, " ".join(entered)))
    values.append(1.0 if h and history[-1].kind is ActionKind.NOTHING else 0.0)
    values.append(max_run / h if h else 0.0)
    return FeatureVector(values=tuple(values))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    expz = math.exp(z)
    return expz / (1.0 + expz)


def _clamp(p: float) -> float:
    return min(max(p, _PROB_FLOOR), 1.0 - _PROB_FLOOR)


def predict_progress(model: ProgressModel, features: FeatureVector) -> float:
    if model.schema_version != features.schema_version:
        raise EstimatorError(
            f"feature schema {features.schema_version!r} does not match "
            f"model schema {model.schema_version!r}"
        )
    z = sum(w * x for w, x in zip(model.weights, features.values)) + model.bias
    return _clamp(_sigmoid(z))


def predict_progress_state(model: ProgressModel, sv: StateView) -> float:
    return predict_progress(model, featurize(sv))


def bce_loss(p_hat: float, p_star: float) -> float:
    if not 0.0 < p_hat < 1.0:
        raise EstimatorError(f"p_hat must lie strictly inside (0, 1), got {p_hat}")
    if not 0.0 <= p_star <= 1.0:
        raise EstimatorError(f"p_star must lie in [0, 1], got {p_star}")
    return -p_star * math.log(p_hat) - (1.0 - p_star) * math.log(1.0 - p_hat)


TrainingExample = tuple[StateView, float]


def train(
    dataset: Sequence[TrainingExample],
    lr: float = 0.5,
    epochs: int = 200,
    batch_size: int | None = None,
    seed: int = 0,
) -> tuple[ProgressModel, list[float]]:
    """Gradient descent on mean binary cross-entropy.

    Full-batch when ``batch_size`` is None, otherwise shuffled
    mini-batches with a per-epoch derived seed. Returns the model and the
    mean loss over the whole dataset after each epoch.
    """
    if not dataset:
        raise EstimatorError("training needs at least one example")
    for sv, p_star in dataset:
        if not 0.0 <= p_star <= 1.0:
            raise EstimatorError(f"label {p_star} outside [0, 1]")
    if lr <= 0:
        raise EstimatorError(f"learning rate must be positive, got {lr}")
    if epochs < 0:
        raise EstimatorError(f"epochs must be non-negative, got {epochs}")

    features = np.array(
        [featurize(sv).values for sv, _ in dataset], dtype=np.float64
    )
    labels = np.array([p for _, p in dataset], dtype=np.float64)
    n, dim = features.shape

    weights = np.zeros(dim)
    bias = 0.0
    curve: list[float] = []

    def mean_loss() -> float:
        z = features @ weights + bias
        p = np.clip(1.0 / (1.0 + np.exp(-z)), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
        return float(
            np.mean(-labels * np.log(p) - (1.0 - labels) * np.log(1.0 - p))
        )

    order = np.arange(n)
    # Saturated predictions are clamped, so overflow in exp/matmul is an
    # expected intermediate, not an error; NaN losses are caught below.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            if batch_size is None or batch_size >= n:
                batches = [order]
            else:
                shuffled = list(order)
                random.Random(derive_seed(seed, "epoch", epoch)).shuffle(shuffled)
                batches = [
                    np.array(shuffled[i : i + batch_size])
                    for i in range(0, n, batch_size)
                ]
            for batch in batches:
                x = features[batch]
                z = x @ weights + bias
                p = np.clip(1.0 / (1.0 + np.exp(-z)), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
                residual = p - labels[batch]
                weights -= lr * (x.T @ residual) / len(batch)
                bias -= lr * float(np.mean(residual))
            loss = mean_loss()
            if not math.isfinite(loss):
                raise EstimatorError(f"training diverged at epoch {epoch}: loss {loss}")
            curve.append(loss)

    model = ProgressModel(
        weights=tuple(float(w) for w in weights),
        bias=float(bias),
        metadata={
            "epochs": epochs,
            "learning_rate": lr,
            "batch_size": batch_size,
            "seed": seed,
            "examples": n,
            "final_loss": curve[-1] if curve else None,
        },
    )
    return model, curve


def _loss_at(weights: Sequence[float], bias: float, x: Sequence[float], p_star: float) -> float:
    z = sum(w * v for w, v in zip(weights, x)) + bias
    return bce_loss(_clamp(_sigmoid(z)), p_star)


def grad_check(
    model: ProgressModel, sample: TrainingExample, epsilon: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if epsilon <= 0:
        raise EstimatorError(f"epsilon must be positive, got {epsilon}")
    sv, p_star = sample
    x = featurize(sv).values
    p_hat = predict_progress(model, FeatureVector(values=x))
    residual = p_hat - p_star

    analytic = [residual * v for v in x] + [residual]

    numeric = []
    weights = list(model.weights)
    for i in range(len(weights)):
        bumped = list(weights)
        bumped[i] = weights[i] + epsilon
        plus = _loss_at(bumped, model.bias, x, p_star)
        bumped[i] = weights[i] - epsilon
        minus = _loss_at(bumped, model.bias, x, p_star)
        numeric.append((plus - minus) / (2.0 * epsilon))
    plus = _loss_at(weights, model.bias + epsilon, x, p_star)
    minus = _loss_at(weights, model.bias - epsilon, x, p_star)
    numeric.append((plus - minus) / (2.0 * epsilon))

    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, abs(a - n) / max(1.0, abs(a), abs(n)))
    return worst


def predict_success(
    model: ProgressModel,
    trajectory: Trajectory,
    tau_s: float = DEFAULT_SUCCESS_THRESHOLD,
) -> bool:
    """Threshold the final-step progress estimate."""
    if not 0.0 < tau_s < 1.0:
        raise EstimatorError(f"tau_s must lie strictly inside (0, 1), got {tau_s}")
    if len(trajectory) == 0:
        sv = initial_state_view(trajectory)
    else:
        sv = state_view(trajectory, len(trajectory) - 1)
    return predict_progress_state(model, sv) >= tau_s


def save_model(path: str | os.PathLike, model: ProgressModel) -> None:
    payload = {
        "schema_version": MODEL_SCHEMA,
        "feature_schema": model.schema_version,
        "weights": list(model.weights),
        "bias": model.bias,
        "metadata": model.metadata,
    }
    atomic_write_text(
        path, json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=1) + "\n"
    )


def load_model(path: str | os.PathLike) -> ProgressModel:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("schema_version") != MODEL_SCHEMA:
        raise EstimatorError(
            f"unsupported model schema {payload.get('schema_version')!r}"
        )
    return ProgressModel(
        weights=tuple(float(w) for w in payload["weights"]),
        bias=float(payload["bias"]),
        schema_version=payload["feature_schema"],
        metadata=payload.get("metadata", {}),
    )


def score_remote(
    endpoint: str, sv: StateView, timeout: float = 10.0
) -> tuple[float, float]:
    """POST the state to a remote scorer; returns (progress, latency seconds)."""
    payload = {
        "instruction": sv.instruction,
        "actions": [action_to_dict(a) for a in sv.action_history],
        "observation": sv.observation,
    }
    start = time.perf_counter()
    try:
        response = requests.post(endpoint, json=payload, timeout=timeout)
    except requests.Timeout as error:
        raise RemoteTimeout(f"scorer at {endpoint} timed out: {error}") from error
    except requests.RequestException as error:
        raise RemoteHTTPError(f"scorer at {endpoint} unreachable: {error}") from error
    latency = time.perf_counter() - start
    if not 200 <= response.status_code < 300:
        raise RemoteHTTPError(
            f"scorer at {endpoint} returned HTTP {response.status_code}"
        )
    try:
        body = response.json()
    except ValueError as error:
        raise RemoteProtocolError(f"scorer returned non-JSON body: {error}") from error
    if not isinstance(body, dict) or "progress" not in body:
        raise RemoteProtocolError(f"scorer response missing 'progress': {body!r}")
    progress = body["progress"]
    if isinstance(progress, bool) or not isinstance(progress, (int, float)):
        raise RemoteProtocolError(f"scorer progress is not numeric: {progress!r}")
    progress = float(progress)
    if not 0.0 <= progress <= 1.0 or not math.isfinite(progress):
        raise RemoteRangeError(f"scorer progress {progress} outside [0, 1]")
    return progress, latency


def score_remote_batch(
    endpoint: str,
    states: Iterable[StateView],
    timeout: float = 10.0,
    max_in_flight: int = 4,
) -> list[tuple[float, float]]:
    return parallel_map(
        lambda sv: score_remote(endpoint, sv, timeout),
        list(states),
        threads=max_in_flight,
    )
