"""Coarse-to-fine diffeomorphic image registration on dense CPU fields.

The package covers the full pipeline: a small reverse-mode autodiff
engine over channels-first float32 arrays, image pyramids and
differentiable warping, stationary-velocity-field integration by scaling
and squaring, a windowed-NCC similarity pyramid, the per-level
registration network, progressive training and direct per-pair
optimization, quality metrics, and binary file formats with a CLI.

Hot kernels run through numba when available; set LAPREG_BACKEND=numpy
to force the pure-numpy fallback (see `lapreg.kernels`).
"""

from . import autodiff
from . import crn
from . import diffeo
from . import engine
from . import formats
from . import gradcheck
from . import kernels
from . import metrics
from . import pyramid
from . import similarity
from . import synth
from .autodiff import Node, backward, leaf
from .diffeo import Transform, folding_stats, integrate, jacobian_det
from .engine import TrainConfig, register_direct, train_coarse_to_fine
from .errors import DataError, LapregError, NumericalError, ShapeError, UsageError
from .kernels import BACKEND
from .metrics import MetricsReport, dice, topology_change, warp_labels
from .pyramid import build_pyramid, upsample_disp, warp
from .similarity import LossConfig, level_loss, local_ncc, similarity_pyramid
from .synth import synth_pair

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataError",
    "LapregError",
    "LossConfig",
    "MetricsReport",
    "Node",
    "NumericalError",
    "ShapeError",
    "TrainConfig",
    "Transform",
    "UsageError",
    "autodiff",
    "backward",
    "build_pyramid",
    "crn",
    "dice",
    "diffeo",
    "engine",
    "folding_stats",
    "formats",
    "gradcheck",
    "integrate",
    "jacobian_det",
    "kernels",
    "leaf",
    "level_loss",
    "local_ncc",
    "metrics",
    "pyramid",
    "register_direct",
    "similarity",
    "similarity_pyramid",
    "synth",
    "synth_pair",
    "topology_change",
    "train_coarse_to_fine",
    "upsample_disp",
    "warp",
    "warp_labels",
]
