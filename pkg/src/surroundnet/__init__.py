"""Low-light image enhancement with learned Retinex surround kernels.

Pure NumPy: a small reverse-mode autodiff engine, the network and its
losses, synthetic darkening, an Adam trainer and a batch command line.
"""

from .model import DESK_CONFIG, NetConfig, SurroundNet, param_breakdown, param_count
from .retinex import apply_separable, build_asf_1d, gaussian_kernel, msr, ssr
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DESK_CONFIG", "NetConfig", "SurroundNet", "TrainConfig", "apply_separable", "build_asf_1d",
    "gaussian_kernel", "msr", "param_breakdown", "param_count", "ssr", "train",
]
