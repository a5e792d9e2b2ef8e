"""Single-shot readout of an exchange-coupled pair of donor electrons."""

from .spin_model import DonorPairParams, NuclearConfig, SpinState
from .tunneling import TunnelingParams
from .signal_chain import TraceParams
from .config import ExperimentConfig, load_config

__all__ = [
    "DonorPairParams",
    "NuclearConfig",
    "SpinState",
    "TunnelingParams",
    "TraceParams",
    "ExperimentConfig",
    "load_config",
]

__version__ = "0.1.0"
