"""End-to-end training with progressive pseudo-label updates."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import nnkit as nn
from ..apn import APN, generate_proposals, load_class_embeddings, pooling_matrix, select_boundary_candidates
from ..losses import (assign_proposal_targets, bdm_loss, boundary_labels_from_pseudo, ctr_loss_grad,
                      pem_loss, region_pooling, total_loss)
from ..pseudo import PseudoLabelSet, generate_pseudo_labels, should_update
from ..synthio import Video
from .config import TrainConfig
from .metrics import pseudo_label_map

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "iter", "L_BDM", "L_PEM", "L_CTR", "total", "pseudo_mAP50")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, video_id, component, value):
        super().__init__(f"non-finite {component}={value} on video {video_id}")
        self.video_id = video_id
        self.component = component


def proposal_candidates(p_start, p_end, T: int, config: TrainConfig):
    starts = select_boundary_candidates(p_start, config.candidate_threshold)
    ends = select_boundary_candidates(p_end, config.candidate_threshold)
    d_max = config.d_max if config.d_max is not None else T
    return generate_proposals(starts, ends, config.d_min, d_max)


def video_objective(model: APN, video: Video, pseudo: PseudoLabelSet, config: TrainConfig,
                    weight: float = 1.0, rng: Optional[np.random.Generator] = None,
                    proposals=None, backward: bool = True) -> Dict[str, float]:
    """Total loss on one video; adds ``weight * dL/dtheta`` into the parameter grads.

    ``proposals`` defaults to the pairs generated from the current boundary
    predictions; only those containing exactly one annotation are used, and at
    most ``max_train_proposals`` of them (seeded subsample).
    """
    F = video.features.data
    T = F.shape[0]
    X, ecache = model.embed(F)
    p_start, p_end, bcache = model.bdm_forward(X)
    l_bdm, d_ps, d_pe = bdm_loss(p_start, p_end, boundary_labels_from_pseudo(pseudo, T))

    if proposals is None:
        proposals = proposal_candidates(p_start, p_end, T, config)
    targets = assign_proposal_targets(proposals, video.points, pseudo, model.M)
    if len(targets) > config.max_train_proposals:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(len(targets), config.max_train_proposals, replace=False))
        targets = [targets[i] for i in pick]
    l_pem = 0.0
    if targets:
        A = pooling_matrix([t.proposal for t in targets], config.N, T, config.sampling)
        c_hat, _, s_hat, pcache = model.pem_pooled_forward(A @ X)
        l_pem, d_c, d_s = pem_loss(c_hat, s_hat, targets)

    Ar, meta = region_pooling(pseudo, T)
    l_ctr = 0.0
    if meta:
        V, ncache = nn.l2_normalize_forward(Ar @ X)
        l_ctr, dV = ctr_loss_grad(V, [m[0] for m in meta], [m[1] for m in meta], config.tau)

    losses = {"L_BDM": l_bdm, "L_PEM": l_pem, "L_CTR": l_ctr,
              "total": total_loss(l_bdm, l_pem, l_ctr, config.lambda1, config.lambda2)}
    for name, value in losses.items():
        if not math.isfinite(value):
            raise NonFiniteLoss(video.id, name, value)
    if not backward:
        return losses

    dX = model.bdm_backward(weight * d_ps, weight * d_pe, bcache)
    if targets and config.lambda1:
        s = weight * config.lambda1
        dX += A.T @ model.pem_pooled_backward(s * d_c, s * d_s, pcache)
    if meta and config.lambda2:
        dX += Ar.T @ nn.l2_normalize_backward(weight * config.lambda2 * dV, ncache)
    model.embed_backward(dX, ecache)
    return losses


def refresh_pseudo_labels(model: APN, corpus: Sequence[Video], config: TrainConfig, tag: int):
    out = {}
    for v in corpus:
        X, _ = model.embed(v.features.data)
        out[v.id] = generate_pseudo_labels(X, v.points, config.kappa, config.max_cluster_iters, tag,
                                           config.medoid_rule, config.bg_threshold, config.smooth)
    return out


def infer_num_classes(corpus: Sequence[Video]) -> int:
    ids = [p.class_id for v in corpus for p in v.points] + [g.class_id for v in corpus for g in v.gt]
    if not ids:
        raise ValueError("corpus has no labelled instances")
    return max(ids) + 1


def build_model(D: int, M: int, config: TrainConfig) -> APN:
    table = load_class_embeddings(config.class_embeddings, M) if config.class_embeddings else None
    if table is not None and table.shape[1] != config.embed_dim:
        raise ValueError(f"class embeddings have D_e={table.shape[1]} but embed_dim={config.embed_dim}")
    return APN(D, M, config.embed_dim, config.hidden, class_names=config.names(M),
               class_embeddings=table, seed=config.seed)


@dataclass
class TrainResult:
    model: APN
    metrics: List[dict]
    pseudo: Dict[str, PseudoLabelSet]
    pseudo_history: List[tuple] = field(default_factory=list)  # (iteration, mAP@0.5 or None)
    checkpoint: Optional[Path] = None


def train(corpus: Sequence[Video], config: TrainConfig, out_dir=None) -> TrainResult:
    config.validate()
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    for v in corpus:
        if not v.points:
            raise ValueError(f"video {v.id} has no point annotations")
    D = corpus[0].features.D
    M = config.num_classes or infer_num_classes(corpus)
    model = build_model(D, M, config)
    adam = nn.AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 11])
    has_gt = any(v.gt for v in corpus)
    gt = {v.id: v.gt for v in corpus}

    def quality(pseudo):
        return pseudo_label_map(pseudo, gt, 0.5) if has_gt else None

    pseudo = refresh_pseudo_labels(model, corpus, config, 0)
    history = [(0, quality(pseudo))]
    log.info("initial pseudo-label mAP@0.5: %s", history[0][1])
    metrics = []
    iteration = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(corpus))
        sums = dict.fromkeys(("L_BDM", "L_PEM", "L_CTR", "total"), 0.0)
        for start in range(0, len(order), config.batch_size):
            batch = [corpus[i] for i in order[start:start + config.batch_size]]
            model.zero_grad()
            for v in batch:
                losses = video_objective(model, v, pseudo[v.id], config, 1.0 / len(batch), rng)
                for k in sums:
                    sums[k] += losses[k]
            nn.adam_step(model.params, adam)
            model.renormalize()
            iteration += 1
            if should_update(iteration, config.R):
                pseudo = refresh_pseudo_labels(model, corpus, config, iteration)
                history.append((iteration, quality(pseudo)))
        row = {"epoch": epoch, "iter": iteration}
        row.update({k: s / len(corpus) for k, s in sums.items()})
        row["pseudo_mAP50"] = history[-1][1]
        metrics.append(row)
        log.info("epoch %d iter %d total %.4f pseudo mAP50 %s", epoch, iteration, row["total"], row["pseudo_mAP50"])

    result = TrainResult(model, metrics, pseudo, history)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out / "checkpoint.npz"
        save_model(result.checkpoint, model, config)
        write_metrics(out / "metrics.csv", metrics)
    return result


def save_model(path, model: APN, config: TrainConfig) -> None:
    meta = {"D": model.D, "M": model.M, "embed_dim": model.embed_dim, "hidden": model.hidden,
            "config": config.to_dict()}
    nn.save_checkpoint(path, model.state_dict(), meta)


def load_model(path):
    from .config import train_config_from_dict

    state, meta = nn.load_checkpoint(path)
    try:
        config = train_config_from_dict(meta.get("config", {}))
        model = APN(meta["D"], meta["M"], meta["embed_dim"], meta["hidden"],
                    class_embeddings=state["text.C"])
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint metadata is missing {exc}") from None
    model.load_state_dict(state)
    return model, config


def write_metrics(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in METRIC_COLUMNS})
