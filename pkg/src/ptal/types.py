"""Shared data model and interval arithmetic.

All times are snippet indices on the integer feature grid. Interval length is
measured as ``t_e - t_s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np


class FeatureSequence:
    """A ``T x D`` matrix of per-snippet features, stored as float64."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"features must be 2-D (T x D), got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("T=0 not allowed")
        if arr.shape[1] < 1:
            raise ValueError("D=0 not allowed")
        if not np.all(np.isfinite(arr)):
            row, col = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite feature at row {row}, column {col}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"FeatureSequence(T={self.T}, D={self.D})"

    def __eq__(self, other):
        return isinstance(other, FeatureSequence) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, order=True)
class PointAnnotation:
    t_p: int
    class_id: int


@dataclass(frozen=True)
class ActionInstance:
    t_s: int
    t_e: int
    class_id: Optional[int] = None

    def __post_init__(self):
        if self.t_s > self.t_e:
            raise ValueError(f"invalid interval: t_s={self.t_s} > t_e={self.t_e}")

    @property
    def is_background(self) -> bool:
        return self.class_id is None

    @property
    def length(self) -> int:
        return self.t_e - self.t_s

    def contains(self, t) -> bool:
        return self.t_s <= t <= self.t_e


@dataclass(frozen=True)
class ScoredPrediction:
    t_s: int
    t_e: int
    class_id: int
    score: float

    def __post_init__(self):
        if self.t_s > self.t_e:
            raise ValueError(f"invalid interval: t_s={self.t_s} > t_e={self.t_e}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


Interval = Union[ActionInstance, ScoredPrediction, Tuple[float, float]]


def _span(iv) -> Tuple[float, float]:
    if isinstance(iv, tuple) or isinstance(iv, list):
        return float(iv[0]), float(iv[1])
    return float(iv.t_s), float(iv.t_e)


def tiou(a: Interval, b: Interval) -> float:
    """Temporal IoU of two intervals; identical zero-length intervals give 1."""
    a_s, a_e = _span(a)
    b_s, b_e = _span(b)
    inter = max(0.0, min(a_e, b_e) - max(a_s, b_s))
    union = (a_e - a_s) + (b_e - b_s) - inter
    if union <= 0.0:
        return 1.0 if (a_s, a_e) == (b_s, b_e) else 0.0
    return inter / union
