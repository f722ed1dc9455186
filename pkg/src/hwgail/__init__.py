"""Handwriting trajectory generation by model-based adversarial imitation learning."""

from hwgail.trajectory import (
    Action,
    EpisodeComplete,
    State,
    Trajectory,
    env_step,
    make_state,
    normalize_unit_square,
    resample_uniform,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "EpisodeComplete",
    "State",
    "Trajectory",
    "env_step",
    "make_state",
    "normalize_unit_square",
    "resample_uniform",
    "__version__",
]
