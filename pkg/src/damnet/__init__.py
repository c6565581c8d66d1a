"""Distributed associative memory network with a memory refreshing loss."""

from .config import ModelConfig
from .model import DamModel, HeadSpec
from .tasks import EpisodeBatch, TaskSpec, generate, task_spec
from .tensor import GraphError, NonFiniteError, Tape, Tensor
from .trainer import EvalResult, evaluate, train

__all__ = [
    "DamModel", "EpisodeBatch", "EvalResult", "GraphError", "HeadSpec",
    "ModelConfig", "NonFiniteError", "Tape", "TaskSpec", "Tensor",
    "evaluate", "generate", "task_spec", "train",
]
__version__ = "0.1.0"
