"""Bilingual word embeddings and lexical alignments from parallel text."""

from .model import ModelConfig
from .training import Checkpoint, TrainConfig

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TrainConfig", "Checkpoint", "__version__"]
