"""Data-driven CPA barrier functions synthesized by iterative convex overbounding."""
from .config import SynthesisConfig
from .conic import ConeProgram, ConeSolution, solve
from .cpa import CpaFunction
from .dataset import Dataset, LipschitzInfo, grid_sample
from .dynamics import benchmark, linear_autonomous, linear_nonautonomous, nonlinear_autonomous, simulate
from .estimator import CpaBarrier
from .geometry import Triangulation, delaunay_triangulate
from .synthesis import SynthesisResult, run
from .verify import check_theorem1, empirical_invariance, extract_controller, maximal_set_oracle

__all__ = [
    "ConeProgram", "ConeSolution", "CpaBarrier", "CpaFunction", "Dataset", "LipschitzInfo", "SynthesisConfig",
    "SynthesisResult", "Triangulation", "benchmark", "check_theorem1", "delaunay_triangulate",
    "empirical_invariance", "extract_controller", "grid_sample", "linear_autonomous", "linear_nonautonomous",
    "maximal_set_oracle", "nonlinear_autonomous", "run", "simulate", "solve",
]
__version__ = "0.1.0"
