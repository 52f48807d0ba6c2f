"""General value functions over options as a computational model of affordances."""
from . import _kernels
from .core import (
    AffordanceSpec, GvfSpec, OptionSpec, State, Transition,
    compose_continuation, option_return, policy_prob, trajectory_return,
)
from .envs import ChainWorld, FiniteModel, GridWorld, LaneWorld
from .learners import LearnerConfig, make_learner
from .vfa import LinearVfa

__version__ = "0.1.0"
BACKEND = _kernels.BACKEND

__all__ = [
    "AffordanceSpec", "BACKEND", "ChainWorld", "FiniteModel", "GridWorld", "GvfSpec", "LaneWorld",
    "LearnerConfig", "LinearVfa", "OptionSpec", "State", "Transition", "compose_continuation",
    "make_learner", "option_return", "policy_prob", "trajectory_return",
]
