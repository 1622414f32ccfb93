"""Stock movement classification on DTW-built dynamic graphs with evolving GCN weights."""
__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
from .config import RunConfig, load_config  # noqa: E402
from .errors import DGRCLError  # noqa: E402

__all__ = ["BACKEND", "DGRCLError", "RunConfig", "load_config", "__version__"]
