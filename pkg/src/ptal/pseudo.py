"""Pseudo-label generation from point annotations.

Each annotated snippet seeds one cluster. Clusters are contiguous runs of
snippets: between two consecutive annotations we search for the split point
that minimises the summed cosine distance of every snippet to its cluster
medoid, optionally move each medoid to its cluster's best representative,
and repeat until nothing changes. Finally frames far from their medoid are
trimmed off the cluster ends and become background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .types import ActionInstance, FeatureSequence, PointAnnotation

DEFAULT_KAPPA = 0.5
DEFAULT_MAX_ITERS = 100
DEFAULT_R = 10
MEDOID_RULES = ("pinned", "free")
THRESHOLD_RULES = ("otsu", "meanstd")


@dataclass
class ClusterState:
    medoids: List[int]
    splits: List[int]  # cluster i covers (splits[i-1], splits[i]]
    T: int
    objective: float
    history: List[float] = field(default_factory=list)
    rounds: int = 0
    converged: bool = False

    def ranges(self):
        bounds = [-1] + list(self.splits) + [self.T - 1]
        return [(bounds[i] + 1, bounds[i + 1]) for i in range(len(self.medoids))]


@dataclass
class PseudoLabelSet:
    actions: List[ActionInstance]
    backgrounds: List[ActionInstance]
    epoch_tag: int = 0


def _as_array(X) -> np.ndarray:
    return X.data if isinstance(X, FeatureSequence) else np.asarray(X, dtype=np.float64)


def distance(a, b) -> float:
    """Cosine distance; a zero vector is at distance 1 from any nonzero vector."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0 if na == nb else 1.0
    return float(min(2.0, max(0.0, 1.0 - np.dot(a, b) / (na * nb))))


def distance_matrix(X) -> np.ndarray:
    """Pairwise cosine distances between the rows of ``X``."""
    X = _as_array(X)
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0.0
    U = np.divide(X, norms[:, None], out=np.zeros_like(X), where=~zero[:, None])
    dist = np.clip(1.0 - U @ U.T, 0.0, 2.0)
    dist[zero, :] = 1.0
    dist[:, zero] = 1.0
    dist[np.ix_(zero, zero)] = 0.0
    np.fill_diagonal(dist, 0.0)
    return dist


def _best_split(left_cost, right_cost, lo: int, hi: int) -> int:
    """argmin_b sum(left_cost[lo..b]) + sum(right_cost[b+1..hi]) over b in [lo, hi)."""
    if hi <= lo:
        raise ValueError(f"empty split range [{lo}, {hi})")
    left = np.cumsum(left_cost[lo:hi + 1])
    right = np.cumsum(right_cost[lo:hi + 1][::-1])[::-1]
    # b = lo + j for j in [0, hi - lo): left part is [lo, b], right part is [b + 1, hi]
    cost = left[:-1] + right[1:]
    return lo + int(np.argmin(cost))


def optimal_split(X, m_left: int, m_right: int, lo: int, hi: int) -> int:
    """Best boundary ``b`` in ``[lo, hi)``: snippets ``<= b`` join the left medoid."""
    X = _as_array(X)
    if hi <= lo:
        raise ValueError(f"empty split range [{lo}, {hi})")
    window = X[lo:hi + 1]
    left = np.array([distance(x, X[m_left]) for x in window])
    right = np.array([distance(x, X[m_right]) for x in window])
    return _best_split(np.pad(left, (lo, 0)), np.pad(right, (lo, 0)), lo, hi)


def clustering_objective(dist: np.ndarray, medoids, ranges) -> float:
    return float(sum(dist[m, s:e + 1].sum() for m, (s, e) in zip(medoids, ranges)))


def _update_medoid(dist: np.ndarray, s: int, e: int, anchor: int) -> int:
    costs = dist[s:e + 1, s:e + 1].sum(axis=1)
    best = costs.min()
    if costs[anchor - s] <= best + 1e-12:
        return anchor
    return s + int(np.argmin(costs))


def cluster_video(X, points: Sequence[PointAnnotation], max_iters: int = DEFAULT_MAX_ITERS,
                  dist: Optional[np.ndarray] = None, medoid_rule: str = "pinned") -> ClusterState:
    """Contiguous, annotation-constrained k-medoids over one video.

    ``medoid_rule="pinned"`` keeps every medoid on its annotated snippet;
    ``"free"`` moves it to the in-cluster snippet with the smallest summed
    distance to the cluster (ties: annotated snippet, then smaller index).
    """
    if medoid_rule not in MEDOID_RULES:
        raise ValueError(f"medoid_rule must be one of {MEDOID_RULES}")
    X = _as_array(X)
    T = X.shape[0]
    if not points:
        raise ValueError("cluster_video needs at least one point annotation")
    anchors = [p.t_p for p in points]
    if any(b <= a for a, b in zip(anchors, anchors[1:])):
        raise ValueError("point annotations must be sorted strictly increasing")
    if anchors[0] < 0 or anchors[-1] >= T:
        raise ValueError(f"point annotation outside [0, T={T})")
    if dist is None:
        dist = distance_matrix(X)
    k = len(anchors)
    medoids = list(anchors)
    splits: List[int] = []
    history: List[float] = []
    converged = False
    rounds = 0
    while rounds < max_iters:
        rounds += 1
        new_splits = []
        for i in range(k - 1):
            lo = max(anchors[i], medoids[i])
            hi = min(anchors[i + 1], medoids[i + 1])
            new_splits.append(_best_split(dist[medoids[i]], dist[medoids[i + 1]], lo, hi))
        bounds = [-1] + new_splits + [T - 1]
        ranges = [(bounds[i] + 1, bounds[i + 1]) for i in range(k)]
        if medoid_rule == "free":
            new_medoids = [_update_medoid(dist, s, e, a) for (s, e), a in zip(ranges, anchors)]
        else:
            new_medoids = list(anchors)
        history.append(clustering_objective(dist, new_medoids, ranges))
        unchanged = new_splits == splits and new_medoids == medoids
        splits, medoids = new_splits, new_medoids
        if unchanged:
            converged = True
            break
    return ClusterState(medoids, splits, T, history[-1], history, rounds, converged)


def otsu_threshold(d: np.ndarray) -> float:
    """Split point maximising between-class variance of a 1-D sample.

    Returns ``inf`` for constant input (nothing is an outlier).
    """
    v = np.sort(np.asarray(d, dtype=np.float64))
    n = len(v)
    if n < 2 or v[-1] - v[0] <= 1e-12:
        return math.inf
    csum = np.cumsum(v)
    i = np.arange(1, n)
    m0 = csum[:-1] / i
    m1 = (csum[-1] - csum[:-1]) / (n - i)
    between = (i / n) * (1 - i / n) * (m0 - m1) ** 2
    # only cut between distinct values
    between[v[1:] - v[:-1] <= 0] = -1.0
    k = int(np.argmax(between))
    return 0.5 * (v[k] + v[k + 1])


def smooth_profile(d: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or len(d) < 2:
        return d
    half = width // 2
    padded = np.pad(d, (half, half), mode="edge")
    return np.convolve(padded, np.ones(2 * half + 1) / (2 * half + 1), mode="valid")


def mine_background(X, state: ClusterState, points: Sequence[PointAnnotation],
                    kappa: float = DEFAULT_KAPPA, epoch_tag: int = 0,
                    dist: Optional[np.ndarray] = None, threshold: str = "otsu",
                    smooth: int = 3) -> PseudoLabelSet:
    """Trim outlying frames off both ends of every cluster.

    Each frame's distance to the cluster medoid (optionally averaged over a
    ``smooth``-wide window) is compared with a per-cluster threshold: the
    two-mode split of the distances (``"otsu"``) or ``mean + kappa * std``
    (``"meanstd"``). Trimming stops at the first inlier and never removes the
    annotated frame. Trimmed runs become background; adjacent runs merge.
    """
    if threshold not in THRESHOLD_RULES:
        raise ValueError(f"threshold must be one of {THRESHOLD_RULES}")
    X = _as_array(X)
    actions = []
    background_mask = np.zeros(state.T, dtype=bool)
    for (s, e), m, p in zip(state.ranges(), state.medoids, points):
        if dist is not None:
            d = dist[m, s:e + 1]
        else:
            d = np.array([distance(X[t], X[m]) for t in range(s, e + 1)])
        d = smooth_profile(d, smooth)
        theta = otsu_threshold(d) if threshold == "otsu" else d.mean() + kappa * d.std()
        a, b = s, e
        while a < p.t_p and d[a - s] > theta:
            a += 1
        while b > p.t_p and d[b - s] > theta:
            b -= 1
        background_mask[s:a] = True
        background_mask[b + 1:e + 1] = True
        actions.append(ActionInstance(a, b, p.class_id))
    return PseudoLabelSet(actions, runs_of(background_mask), epoch_tag)


def runs_of(mask: np.ndarray) -> List[ActionInstance]:
    """Maximal runs of True as background instances."""
    out = []
    t, T = 0, len(mask)
    while t < T:
        if mask[t]:
            start = t
            while t + 1 < T and mask[t + 1]:
                t += 1
            out.append(ActionInstance(start, t, None))
        t += 1
    return out


def generate_pseudo_labels(X, points: Sequence[PointAnnotation], kappa: float = DEFAULT_KAPPA,
                           max_iters: int = DEFAULT_MAX_ITERS, epoch_tag: int = 0,
                           medoid_rule: str = "pinned", threshold: str = "otsu",
                           smooth: int = 3) -> PseudoLabelSet:
    X = _as_array(X)
    if not points:
        return PseudoLabelSet([], [], epoch_tag)
    dist = distance_matrix(X)
    state = cluster_video(X, points, max_iters, dist=dist, medoid_rule=medoid_rule)
    return mine_background(X, state, points, kappa, epoch_tag, dist=dist, threshold=threshold, smooth=smooth)


def should_update(iteration: int, R: int = DEFAULT_R) -> bool:
    return iteration > 0 and iteration % R == 0
