"""Full-band / sub-band fusion speech enhancement with a NumPy recurrent core."""

from fullsub.dsp import StftConfig, hann_window, istft, magnitude, stft
from fullsub.errors import (
    CorruptWeights,
    DecodeError,
    FullSubError,
    InvalidArgument,
    NonFiniteLoss,
    OutOfRange,
    ShapeMismatch,
)
from fullsub.mask import CrmConfig, apply_mask, compress, compute_cirm, decompress
from fullsub.model import (
    FullBandBaseline,
    FullSubNet,
    SubBandBaseline,
    count_params,
    load_weights,
    save_weights,
)

__version__ = "0.1.0"

__all__ = [
    "StftConfig",
    "hann_window",
    "stft",
    "istft",
    "magnitude",
    "CrmConfig",
    "compute_cirm",
    "compress",
    "decompress",
    "apply_mask",
    "FullSubNet",
    "FullBandBaseline",
    "SubBandBaseline",
    "count_params",
    "save_weights",
    "load_weights",
    "FullSubError",
    "InvalidArgument",
    "ShapeMismatch",
    "OutOfRange",
    "CorruptWeights",
    "DecodeError",
    "NonFiniteLoss",
]
