"""Point clouds, weighted discrete distributions and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHT_SUM_TOL = 1e-12


class DataError(ValueError):
    """Raised for malformed input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """n points in R^d stored row-wise."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"points must be a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain NaN or Inf")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Convex weights over the rows of a PointCloud.

    Weights are stored densely; the support is the set of indices with a
    strictly positive weight.
    """

    cloud: PointCloud
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != self.cloud.n:
            raise DataError(f"expected {self.cloud.n} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)) or w.min() < 0:
            raise DataError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise DataError(f"weights sum to {total!r}, not 1")
        if not np.any(w > 0):
            raise DataError("empty support")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def normalized(cls, cloud: PointCloud, weights) -> "DiscreteDistribution":
        """Build from nonnegative weights, rescaling them to sum to one."""
        w = np.asarray(weights, dtype=np.float64)
        return cls(cloud, w / w.sum())

    @property
    def n(self) -> int:
        return self.cloud.n

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def restrict(self) -> "DiscreteDistribution":
        """The same measure on a cloud holding only the support points."""
        idx = self.support
        if idx.size == self.n:
            return self
        return DiscreteDistribution.normalized(PointCloud(self.points[idx]), self.weights[idx])

    def same_as(self, other: "DiscreteDistribution") -> bool:
        """True when both carry identical points and weights."""
        return same_cloud(self.cloud, other.cloud) and np.array_equal(self.weights, other.weights)


def same_cloud(a: PointCloud, b: PointCloud) -> bool:
    return a is b or (a.points.shape == b.points.shape and np.array_equal(a.points, b.points))


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    stddev: np.ndarray = field()

    def apply(self, cloud: PointCloud) -> PointCloud:
        return PointCloud((cloud.points - self.mean) / self.stddev)

    def invert(self, cloud: PointCloud) -> PointCloud:
        return PointCloud(cloud.points * self.stddev + self.mean)


def load_csv(path, has_header: bool = False) -> PointCloud:
    """Read a comma-separated numeric file into a PointCloud."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no rows")
    return PointCloud(np.array(rows, dtype=np.float64))


def standardize(cloud: PointCloud) -> tuple[PointCloud, StandardizationStats]:
    """Center each column and scale it to unit population variance.

    Constant columns map to zero and keep a recorded stddev of 1.
    """
    if cloud.n < 2:
        raise DataError("standardize needs at least 2 points")
    mean = cloud.points.mean(axis=0)
    centered = cloud.points - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    # relative threshold so float noise in a constant column does not get amplified
    scale = np.maximum(np.abs(mean), 1.0)
    std = np.where(std <= 1e-12 * scale, 1.0, std)
    stats = StandardizationStats(_frozen(mean), _frozen(std))
    return PointCloud(centered / std), stats


def uniform(cloud: PointCloud) -> DiscreteDistribution:
    return DiscreteDistribution(cloud, np.full(cloud.n, 1.0 / cloud.n))
