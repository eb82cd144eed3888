"""Convexly weighted coresets for the Sinkhorn divergence.

Typical use::

    from co2coreset import Co2Config, compress, uniform, PointCloud
    cs = compress(uniform(PointCloud(X)), Co2Config(epsilon=1.0, m=16))
"""

from .baselines import herding, random_coreset
from .co2 import (Co2Config, SinkhornQuadraticForm, compress, hutchinson_diag, kernel_selection,
                  quad_approx_error, refine_weights, select_tau)
from .data import (DataError, DiscreteDistribution, PointCloud, load_csv, standardize,
                   uniform)
from .kernels import GaussianKernel, gram, mmd_sq
from .lowrank import PsdFactor, nystrom, tail_sum
from .recombination import Coreset, recombine, sweep
from .sinkhorn import SinkhornProblem, divergence, ot_eps, self_plan, solve

__all__ = [
    "Co2Config", "Coreset", "DataError", "DiscreteDistribution", "GaussianKernel", "PointCloud",
    "PsdFactor", "SinkhornProblem", "SinkhornQuadraticForm", "compress", "divergence", "gram",
    "herding", "hutchinson_diag", "kernel_selection", "load_csv", "mmd_sq", "nystrom", "ot_eps",
    "quad_approx_error", "random_coreset", "recombine", "refine_weights", "select_tau",
    "self_plan", "solve", "standardize", "sweep", "tail_sum", "uniform",
]
