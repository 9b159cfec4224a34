"""Miniature VGG training engine for scene-recognition experiments."""
from .errors import (ConfigError, DataError, FormatError, IntegrityError, MiniVGGError,
                     ShapeError, TrainingDivergedError)
from .model import ArchConfig, InitSpec, Network, build, param_count, transfer_init

__version__ = "0.1.0"
