"""Post-processing and detection metrics: NMS, AP and mAP over tIoU grids."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from ..types import ActionInstance, ScoredPrediction, tiou

log = logging.getLogger(__name__)

ANET_GRID = tuple(float(x) for x in np.round(np.arange(0.5, 0.951, 0.05), 2))
THUMOS_GRID = tuple(float(x) for x in np.round(np.arange(0.1, 0.71, 0.1), 1))
GRIDS = {"anet": ANET_GRID, "thumos": THUMOS_GRID}


def nms(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> List[ScoredPrediction]:
    """Greedy 1-D non-maximum suppression (single class)."""
    order = sorted(preds, key=lambda p: (-p.score, p.t_s, p.t_e))
    keep: List[ScoredPrediction] = []
    while order:
        best = order.pop(0)
        keep.append(best)
        order = [p for p in order if tiou(best, p) <= threshold]
    return keep


def nms_per_class(preds: Sequence[ScoredPrediction], threshold: float = 0.5,
                  cross_class: bool = False) -> List[ScoredPrediction]:
    if cross_class:
        return nms(preds, threshold)
    out = []
    for c in sorted({p.class_id for p in preds}):
        out.extend(nms([p for p in preds if p.class_id == c], threshold))
    return sorted(out, key=lambda p: (-p.score, p.t_s, p.t_e, p.class_id))


def average_precision(preds: Sequence[Tuple[str, ScoredPrediction]],
                      gt: Mapping[str, Sequence[ActionInstance]], tiou_threshold: float) -> float:
    """AP of one class: area under the (non-interpolated) step PR curve.

    ``preds`` are ``(video_id, prediction)`` pairs; ``gt`` maps video ids to
    that class's ground-truth instances.
    """
    n_gt = sum(len(v) for v in gt.values())
    if n_gt == 0:
        raise ValueError("average precision undefined without ground truth")
    order = sorted(preds, key=lambda vp: (-vp[1].score, vp[0], vp[1].t_s, vp[1].t_e))
    matched = {vid: np.zeros(len(g), dtype=bool) for vid, g in gt.items()}
    tp = 0
    ap = 0.0
    for rank, (vid, p) in enumerate(order, 1):
        cands = gt.get(vid, ())
        best, best_j = -1.0, -1
        for j, g in enumerate(cands):
            if matched[vid][j]:
                continue
            ov = tiou(p, g)
            if ov > best:
                best, best_j = ov, j
        if best_j >= 0 and best >= tiou_threshold:
            matched[vid][best_j] = True
            tp += 1
            ap += (tp / rank) / n_gt
    return ap


@dataclass
class EvalReport:
    thresholds: List[float]
    mAP: List[float]
    per_class_ap: Dict[int, List[float]] = field(default_factory=dict)

    @property
    def average_mAP(self) -> float:
        return float(np.mean(self.mAP)) if self.mAP else 0.0

    def at(self, threshold: float) -> float:
        for t, m in zip(self.thresholds, self.mAP):
            if abs(t - threshold) < 1e-9:
                return m
        raise KeyError(threshold)

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "mAP": list(self.mAP),
            "average_mAP": self.average_mAP,
            "per_class_ap": {str(k): v for k, v in self.per_class_ap.items()},
        }

    def write_csv(self, path) -> None:
        classes = sorted(self.per_class_ap)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tiou", "mAP"] + [f"AP_class_{c}" for c in classes])
            for i, t in enumerate(self.thresholds):
                w.writerow([t, self.mAP[i]] + [self.per_class_ap[c][i] for c in classes])
            w.writerow(["average", self.average_mAP] + ["" for _ in classes])


def evaluate(predictions: Mapping[str, Sequence[ScoredPrediction]],
             gt: Mapping[str, Sequence[ActionInstance]],
             thresholds: Sequence[float] = ANET_GRID) -> EvalReport:
    """Per-threshold mAP over the classes that have ground truth."""
    if not thresholds:
        raise ValueError("need at least one tIoU threshold")
    classes = sorted({g.class_id for insts in gt.values() for g in insts if g.class_id is not None})
    if not classes:
        raise ValueError("no ground-truth instances to evaluate against")
    extra = {p.class_id for ps in predictions.values() for p in ps} - set(classes)
    if extra:
        log.info("ignoring predictions for classes without ground truth: %s", sorted(extra))
    per_class: Dict[int, List[float]] = {}
    for c in classes:
        gt_c = {vid: [g for g in insts if g.class_id == c] for vid, insts in gt.items()}
        pred_c = [(vid, p) for vid, ps in predictions.items() for p in ps if p.class_id == c]
        per_class[c] = [average_precision(pred_c, gt_c, t) for t in thresholds]
    mAP = [float(np.mean([per_class[c][i] for c in classes])) for i in range(len(thresholds))]
    return EvalReport(list(thresholds), mAP, per_class)


def pseudo_label_map(pseudo_by_video, gt: Mapping[str, Sequence[ActionInstance]], threshold: float = 0.5) -> float:
    """mAP of pseudo action instances (scored 1.0) against ground truth."""
    preds = {
        vid: [ScoredPrediction(a.t_s, a.t_e, a.class_id, 1.0) for a in ps.actions]
        for vid, ps in pseudo_by_video.items()
    }
    return evaluate(preds, gt, [threshold]).mAP[0]
