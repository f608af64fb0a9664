"""Mean-field, correlator (MFQF) and exact Lindblad dynamics of driven-dissipative spin lattices."""
from .lattice import LatticeSpec
from .params import ModelParams

__version__ = "0.1.0"

__all__ = ["LatticeSpec", "ModelParams", "__version__"]
