"""Comparison compressors: uniform random subsets and greedy kernel herding.

Both return uniformly weighted coresets; callers re-optimize the weights
with :func:`co2coreset.co2.refine_weights` so every method is compared with
post-selection weights.
"""

from __future__ import annotations

import numpy as np

from .co2 import _matrix_of
from .data import DiscreteDistribution
from .recombination import Coreset


def random_coreset(data: DiscreteDistribution, m: int, rng: np.random.Generator) -> Coreset:
    """m distinct support points drawn uniformly, equal weights."""
    support = data.support
    m = min(m, support.size)
    idx = np.sort(rng.choice(support, size=m, replace=False))
    return Coreset(data.cloud, idx, np.full(m, 1.0 / m), method="random", m_target=m)


def herding(data: DiscreteDistribution, m: int, form) -> Coreset:
    """Greedy kernel herding against the matrix of ``form``.

    Each step adds the point that, with uniform weights on the selection,
    minimizes (w - w_data)^T M (w - w_data). Points are not repeated.
    """
    M = _matrix_of(form)
    target = data.weights
    embed = M @ target
    diag = np.diag(M).copy()
    m = min(m, data.support.size)
    running = np.zeros(data.n)  # M @ (indicator of the selection)
    taken = np.zeros(data.n, dtype=bool)
    taken[data.weights <= 0] = True
    chosen = []
    for t in range(m):
        k = t + 1
        score = (2.0 * running + diag) / k**2 - 2.0 * embed / k
        score[taken] = np.inf
        x = int(np.argmin(score))
        chosen.append(x)
        taken[x] = True
        running += M[:, x]
    idx = np.sort(np.array(chosen))
    return Coreset(data.cloud, idx, np.full(m, 1.0 / m), method="herding", m_target=m)
