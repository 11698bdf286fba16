from __future__ import annotations

from typing import List

import numpy as np

from ..apn import APN, pooling_matrix
from ..synthio import Video
from ..types import ScoredPrediction
from .config import TrainConfig
from .metrics import nms_per_class
from .training import proposal_candidates


def score_proposals(model: APN, F, config: TrainConfig):
    """Proposals of one video and their ``P x M`` fused scores (class prob x confidence)."""
    X, _ = model.embed(F)
    p_start, p_end, _ = model.bdm_forward(X)
    proposals = proposal_candidates(p_start, p_end, X.shape[0], config)
    if not proposals:
        return [], np.zeros((0, model.M))
    A = pooling_matrix(proposals, config.N, X.shape[0], config.sampling)
    c_hat, _, s_hat, _ = model.pem_pooled_forward(A @ X)
    scores = c_hat * s_hat
    if config.boundary_fusion:
        idx = np.asarray(proposals)
        scores = scores * (p_start[idx[:, 0]] * p_end[idx[:, 1]])[:, None]
    return proposals, scores


def infer(video: Video, model: APN, config: TrainConfig) -> List[ScoredPrediction]:
    proposals, scores = score_proposals(model, video.features.data, config)
    preds = []
    for (s, e), row in zip(proposals, scores):
        classes = range(model.M) if config.multi_class else [int(np.argmax(row))]
        preds.extend(ScoredPrediction(s, e, c, float(row[c])) for c in classes)
    return nms_per_class(preds, config.nms_threshold, config.cross_class_nms)


def infer_corpus(corpus, model: APN, config: TrainConfig):
    return {v.id: infer(v, model, config) for v in corpus}
