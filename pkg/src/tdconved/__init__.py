"""Temporal deformable convolutional encoder-decoder for sequence captioning."""

from .config import Config
from .model import TDConvED
from .vocab import Vocabulary, build_vocab

__all__ = ["Config", "TDConvED", "Vocabulary", "build_vocab"]
__version__ = "0.1.0"
