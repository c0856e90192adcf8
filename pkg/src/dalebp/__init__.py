"""Spiking networks with Dale-constrained Pyr/PV/SOM populations trained by local error routing."""

from .errors import ConfigurationError, ContractError, DalebpError, NumericFault, ParseError, TraceMismatch
from .network import Network, NetworkConfig, alignment_angle, output_error, run_trial
from .weights import DaleMatrix, doubly_normalize, init_kaiming

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractError", "DalebpError", "NumericFault", "ParseError", "TraceMismatch",
    "Network", "NetworkConfig", "alignment_angle", "output_error", "run_trial",
    "DaleMatrix", "doubly_normalize", "init_kaiming",
]
