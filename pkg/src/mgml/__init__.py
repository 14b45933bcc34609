"""Multi-granularity multi-level feature ensemble network on a small numpy autograd core."""
from .anchors import Anchor, CropConfig, propose, propose_grid, propose_seven
from .errors import (BoundsError, ConfigError, DivergenceError, DomainError, MGMLError, ParseError,
                     ShapeError, UsageError)
from .generators import channel_separate_extract, cs_fg, fc_fg, full_channel_extract
from .model import BackboneConfig, BranchOutputs, MGMLNet, ModelConfig
from .tensor import Shape, Tensor
from .training import EvalReport, TrainConfig, evaluate, objective, train

__version__ = "0.1.0"
