"""Integrated acoustic echo cancellation and noise reduction testbench.

Compares the generalised echo and interference canceller (GEIC) with the
GEVD-based extended multichannel Wiener filter on simulated rooms with
linear or cubic Hammerstein echo paths.
"""

from . import bench, filters, linalg, metrics, room, stats, stft
from .bench import ExperimentConfig, ResultsTable
from .filters import FilterBank, geic_solve, mwf_ext
from .linalg import BACKEND
from .stats import VadScalings

__version__ = bench.__version__

__all__ = [
    "BACKEND", "ExperimentConfig", "FilterBank", "ResultsTable", "VadScalings",
    "bench", "filters", "geic_solve", "linalg", "metrics", "mwf_ext", "room", "stats", "stft",
]
