"""Multi-task Predator-Prey environment."""

from .tasks import N_ACTIONS, N_FEATURES, ScenarioFamily, TaskSpec, outside_training, sample_task
from .predator_prey import (
    ACTION_NAMES, CAPTURE, DOWN, LEFT, RIGHT, STOP, UP,
    GlobalState, InvalidStateError, Observation, PredatorPrey, StepResult, WorldState,
    capture_rule, trace_to_dict,
)

__all__ = [
    "N_ACTIONS", "N_FEATURES", "ScenarioFamily", "TaskSpec", "outside_training", "sample_task",
    "ACTION_NAMES", "CAPTURE", "DOWN", "LEFT", "RIGHT", "STOP", "UP",
    "GlobalState", "InvalidStateError", "Observation", "PredatorPrey", "StepResult", "WorldState",
    "capture_rule", "trace_to_dict",
]
