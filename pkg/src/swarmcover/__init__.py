"""Multi-agent coverage control with potential-shaped rewards and MAPPO."""
from swarmcover.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
