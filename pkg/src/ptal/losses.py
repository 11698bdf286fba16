"""Training objectives and target assignment.

Every loss returns its value together with the gradient w.r.t. its inputs so
the training loop can chain them back through the network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import nnkit as nn
from .pseudo import PseudoLabelSet
from .types import PointAnnotation, tiou

log = logging.getLogger(__name__)

EPS = 1e-7


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def boundary_regions(t_s: int, t_e: int, T: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Start and end regions: width ``d/5`` centred on each boundary, at least one snippet."""
    half = (t_e - t_s) / 10.0

    def region(c):
        a = min(max(_round(c - half), 0), T - 1)
        b = min(max(_round(c + half), 0), T - 1)
        return a, b

    return region(t_s), region(t_e)


@dataclass
class BoundaryLabels:
    g_start: np.ndarray
    g_end: np.ndarray


def boundary_labels_from_pseudo(pseudo: PseudoLabelSet, T: int) -> BoundaryLabels:
    g_start = np.zeros(T)
    g_end = np.zeros(T)
    for inst in pseudo.actions:
        (a, b), (c, d) = boundary_regions(inst.t_s, inst.t_e, T)
        g_start[a:b + 1] = 1.0
        g_end[c:d + 1] = 1.0
    return BoundaryLabels(g_start, g_end)


def _balanced_bce(p, g):
    T = len(p)
    pc = np.clip(p, EPS, 1.0 - EPS)
    pos = g > 0.5
    n_pos = int(pos.sum())
    n_neg = T - n_pos
    loss = 0.0
    grad = np.zeros(T)
    if n_pos:
        a = T / (2.0 * n_pos)
        loss -= a * np.sum(np.log(pc[pos]))
        grad[pos] = -a / pc[pos]
    if n_neg:
        a = T / (2.0 * n_neg)
        loss -= a * np.sum(np.log(1.0 - pc[~pos]))
        grad[~pos] = a / (1.0 - pc[~pos])
    # clamped entries carry no gradient
    grad[(p < EPS) | (p > 1.0 - EPS)] = 0.0
    return loss / T, grad / T


def bdm_loss(p_start, p_end, labels: BoundaryLabels):
    """Class-balanced BCE on both boundary sequences.

    Returns ``(loss, d_p_start, d_p_end)``.
    """
    ls, gs = _balanced_bce(np.asarray(p_start, dtype=np.float64), labels.g_start)
    le, ge = _balanced_bce(np.asarray(p_end, dtype=np.float64), labels.g_end)
    return ls + le, gs, ge


# ---------------------------------------------------------------------------
# proposal targets and PEM loss


@dataclass
class ProposalTarget:
    index: int  # position in the proposal list
    proposal: Tuple[int, int]
    class_id: int
    c: np.ndarray  # one-hot
    s: float  # tIoU with the annotation's pseudo instance


def assign_proposal_targets(proposals: Sequence[Tuple[int, int]], points: Sequence[PointAnnotation],
                            pseudo: PseudoLabelSet, M: int) -> List[ProposalTarget]:
    """Targets for proposals that contain exactly one point annotation."""
    if len(pseudo.actions) != len(points):
        raise RuntimeError(f"{len(points)} annotations but {len(pseudo.actions)} pseudo instances")
    for p, inst in zip(points, pseudo.actions):
        if not inst.contains(p.t_p):
            raise RuntimeError(f"pseudo instance {inst} does not contain its annotation {p}")
    if not proposals:
        return []
    t_p = np.array([p.t_p for p in points], dtype=np.int64)
    spans = np.asarray(proposals, dtype=np.int64).reshape(-1, 2)
    # points are sorted, so counts inside [s, e] come from two binary searches
    first = np.searchsorted(t_p, spans[:, 0], side="left")
    count = np.searchsorted(t_p, spans[:, 1], side="right") - first
    out = []
    for idx in np.flatnonzero(count == 1):
        s, e = int(spans[idx, 0]), int(spans[idx, 1])
        k = int(first[idx])
        inst = pseudo.actions[k]
        c = np.zeros(M)
        c[points[k].class_id] = 1.0
        out.append(ProposalTarget(int(idx), (s, e), points[k].class_id, c, tiou((s, e), (inst.t_s, inst.t_e))))
    return out


def _bce(p, q):
    pc = np.clip(p, EPS, 1.0 - EPS)
    loss = -(q * np.log(pc) + (1.0 - q) * np.log(1.0 - pc))
    grad = -(q / pc) + (1.0 - q) / (1.0 - pc)
    grad = np.where((p < EPS) | (p > 1.0 - EPS), 0.0, grad)
    return loss, grad


def pem_loss(c_hat, s_hat, targets: Sequence[ProposalTarget]):
    """Mean over proposals of class-averaged BCE plus the target-class confidence BCE.

    ``c_hat`` and ``s_hat`` are ``P x M`` and row-aligned with ``targets``.
    Returns ``(loss, d_c_hat, d_s_hat)``.
    """
    c_hat = np.asarray(c_hat, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if not targets:
        log.warning("pem_loss called with no proposal targets; contributing 0")
        return 0.0, np.zeros_like(c_hat), np.zeros_like(s_hat)
    P, M = c_hat.shape
    C = np.stack([t.c for t in targets])
    cls_loss, cls_grad = _bce(c_hat, C)
    rows = np.arange(P)
    cols = np.array([t.class_id for t in targets])
    s_target = np.array([t.s for t in targets])
    conf_loss, conf_grad = _bce(s_hat[rows, cols], s_target)
    loss = (cls_loss.mean(axis=1) + conf_loss).mean()
    d_c = cls_grad / (M * P)
    d_s = np.zeros_like(s_hat)
    d_s[rows, cols] = conf_grad / P
    return float(loss), d_c, d_s


# ---------------------------------------------------------------------------
# fine-grained contrastive loss


@dataclass
class RegionFeature:
    vector: np.ndarray
    kind: str  # "start" | "end" | "background"
    class_id: Optional[int]
    instance: int


def region_pooling(pseudo: PseudoLabelSet, T: int):
    """Averaging matrix (``R x T``) plus (kind, class_id, instance) per row."""
    rows, meta = [], []
    for i, inst in enumerate(pseudo.actions):
        for kind, (a, b) in zip(("start", "end"), boundary_regions(inst.t_s, inst.t_e, T)):
            r = np.zeros(T)
            r[a:b + 1] = 1.0 / (b - a + 1)
            rows.append(r)
            meta.append((kind, inst.class_id, i))
    for k, bg in enumerate(pseudo.backgrounds):
        r = np.zeros(T)
        r[bg.t_s:bg.t_e + 1] = 1.0 / (bg.t_e - bg.t_s + 1)
        rows.append(r)
        meta.append(("background", None, k))
    A = np.array(rows) if rows else np.zeros((0, T))
    return A, meta


def region_features(X, pseudo: PseudoLabelSet) -> List[RegionFeature]:
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    A, meta = region_pooling(pseudo, X.shape[0])
    if not meta:
        return []
    V, _ = nn.l2_normalize_forward(A @ X)
    return [RegionFeature(V[r], kind, cid, inst) for r, (kind, cid, inst) in enumerate(meta)]


def _lse(z):
    m = z.max()
    return m + math.log(np.exp(z - m).sum())


def ctr_loss_grad(V, kinds: Sequence[str], classes: Sequence[Optional[int]], tau: float = 0.1):
    """Contrastive loss over region vectors ``V`` (``R x D``); returns ``(loss, dV)``."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    V = np.asarray(V, dtype=np.float64)
    dV = np.zeros_like(V)
    kinds = np.asarray(kinds)
    bg = np.flatnonzero(kinds == "background")
    total = 0.0
    for kind in ("start", "end"):
        idx_kind = np.flatnonzero(kinds == kind)
        for j in sorted({classes[i] for i in idx_kind}):
            group = [i for i in idx_kind if classes[i] == j]
            if len(group) < 2 or len(bg) == 0:
                continue
            for i in group:
                pos = np.array([p for p in group if p != i])
                lp = V[pos] @ V[i] / tau
                ln = V[bg] @ V[i] / tau
                both = np.concatenate([lp, ln])
                total += _lse(both) - _lse(lp)
                w_all = np.exp(both - _lse(both))
                w_pos = np.exp(lp - _lse(lp))
                g_pos = w_all[:len(pos)] - w_pos
                g_neg = w_all[len(pos):]
                dV[i] += (g_pos @ V[pos] + g_neg @ V[bg]) / tau
                dV[pos] += g_pos[:, None] * V[i] / tau
                dV[bg] += g_neg[:, None] * V[i] / tau
    return float(total), dV


def ctr_loss(regions: Sequence[RegionFeature], tau: float = 0.1) -> float:
    if not regions:
        return 0.0
    V = np.stack([r.vector for r in regions])
    loss, _ = ctr_loss_grad(V, [r.kind for r in regions], [r.class_id for r in regions], tau)
    return loss


def total_loss(l_bdm: float, l_pem: float, l_ctr: float, lambda1: float = 1.0, lambda2: float = 0.1) -> float:
    return l_bdm + lambda1 * l_pem + lambda2 * l_ctr
