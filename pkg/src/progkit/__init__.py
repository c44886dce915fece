"""Self-annotated progress labels and dense progress rewards for agent trajectories.

The toolkit mines per-goal execution recipes from successful trajectories
with a soft longest-common-subsequence, discovers key steps in unseen
trajectories, assigns progress labels, trains a small progress estimator,
and converts progress into dense per-step rewards. A synthetic milestone
environment supplies ground truth for validating the labeling pipeline.
"""

from .model import (
    Action,
    ActionKind,
    LabeledStep,
    ScrollDirection,
    Step,
    Trajectory,
    Violation,
    validate_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionKind",
    "LabeledStep",
    "ScrollDirection",
    "Step",
    "Trajectory",
    "Violation",
    "validate_trajectory",
    "__version__",
]
