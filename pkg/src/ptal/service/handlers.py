"""Service operations as plain functions: pydantic model in, pydantic model out.

The FastAPI app routes to these, and the CLI calls them directly when no
server URL is given, so both paths share one implementation.
"""

from __future__ import annotations

import base64
import tempfile
from pathlib import Path
from typing import Dict, List

from .. import __version__
from ..pipeline import (GRIDS, evaluate as evaluate_preds, infer, load_model, nms_per_class, save_model,
                        train as train_model, train_config_from_dict)
from ..pseudo import generate_pseudo_labels
from ..synthio import CorpusConfig, Video, build_config, generate_corpus
from ..types import ActionInstance, FeatureSequence, PointAnnotation, ScoredPrediction
from . import schemas as S


def _instance(i: S.Instance) -> ActionInstance:
    return ActionInstance(i.t_s, i.t_e, i.class_id)


def _instance_out(i: ActionInstance) -> S.Instance:
    return S.Instance(t_s=i.t_s, t_e=i.t_e, class_id=i.class_id)


def video_from_schema(v: S.VideoIn) -> Video:
    video = Video(v.video_id, FeatureSequence(v.features), [_instance(g) for g in v.gt],
                  [PointAnnotation(p.t_p, p.class_id) for p in v.points])
    video.validate()
    return video


def video_to_schema(v: Video) -> S.VideoIn:
    return S.VideoIn(video_id=v.id, features=v.features.data.tolist(),
                     points=[S.Point(t_p=p.t_p, class_id=p.class_id) for p in v.points],
                     gt=[_instance_out(g) for g in v.gt])


def predictions_by_video(preds: List[S.Prediction]) -> Dict[str, List[ScoredPrediction]]:
    out: Dict[str, List[ScoredPrediction]] = {}
    for p in preds:
        out.setdefault(p.video_id, []).append(ScoredPrediction(p.t_s, p.t_e, p.class_id, p.score))
    return out


def predictions_to_schema(by_video) -> List[S.Prediction]:
    out = [S.Prediction(video_id=vid, t_s=p.t_s, t_e=p.t_e, class_id=p.class_id, score=float(p.score))
           for vid, ps in by_video.items() for p in ps]
    out.sort(key=lambda p: (p.video_id, -p.score, p.t_s, p.t_e, p.class_id))
    return out


def encode_checkpoint(path) -> str:
    return base64.b64encode(Path(path).read_bytes()).decode("ascii")


def decode_checkpoint(blob: str):
    try:
        raw = base64.b64decode(blob, validate=True)
    except ValueError:
        raise ValueError("checkpoint_b64 is not valid base64") from None
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "checkpoint.npz"
        path.write_bytes(raw)
        try:
            return load_model(path)
        except (OSError, KeyError, ValueError) as exc:
            raise ValueError(f"unreadable checkpoint: {exc}") from None


# ---------------------------------------------------------------------------


def health() -> S.Health:
    return S.Health(status="ok", version=__version__)


def generate(req: S.GenerateRequest) -> S.GenerateResponse:
    config = build_config(CorpusConfig, req.config, "config")
    config.validate()
    return S.GenerateResponse(videos=[video_to_schema(v) for v in generate_corpus(config)])


def cluster(req: S.ClusterRequest) -> S.ClusterResponse:
    results = []
    for v in req.videos:
        video = video_from_schema(v)
        if not video.points:
            raise ValueError(f"video {video.id} has no point annotations")
        ps = generate_pseudo_labels(video.features, video.points, req.kappa, req.max_iters, req.epoch_tag,
                                    req.medoid_rule, req.threshold, req.smooth)
        results.append(S.PseudoLabels(
            video_id=video.id, T=video.T, points=v.points,
            gt=[_instance_out(a) for a in ps.actions],
            backgrounds=[_instance_out(b) for b in ps.backgrounds],
            epoch_tag=ps.epoch_tag))
    return S.ClusterResponse(results=results)


def train(req: S.TrainRequest) -> S.TrainResponse:
    config = train_config_from_dict(req.config)
    corpus = [video_from_schema(v) for v in req.videos]
    result = train_model(corpus, config)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "checkpoint.npz"
        save_model(path, result.model, config)
        blob = encode_checkpoint(path)
    metrics = [{k: (v if v is None or isinstance(v, int) else float(v)) for k, v in row.items()}
               for row in result.metrics]
    history = [[float(i), None if m is None else float(m)] for i, m in result.pseudo_history]
    return S.TrainResponse(checkpoint_b64=blob, metrics=metrics, pseudo_history=history)


def run_inference(req: S.InferRequest) -> S.PredictionList:
    model, config = decode_checkpoint(req.checkpoint_b64)
    if req.overrides:
        merged = config.to_dict()
        merged.update(req.overrides)
        config = train_config_from_dict(merged)
    out = {}
    for v in req.videos:
        video = video_from_schema(v)
        if video.features.D != model.D:
            raise ValueError(f"video {video.id}: feature dim {video.features.D} != checkpoint D={model.D}")
        out[video.id] = infer(video, model, config)
    return S.PredictionList(predictions=predictions_to_schema(out))


def evaluate(req: S.EvaluateRequest) -> S.EvaluateResponse:
    thresholds = req.thresholds if req.thresholds else GRIDS[req.grid or "anet"]
    gt = {g.video_id: [_instance(i) for i in g.gt] for g in req.gt}
    report = evaluate_preds(predictions_by_video(req.predictions), gt, list(thresholds))
    return S.EvaluateResponse(**report.to_dict())


def nms(req: S.NMSRequest) -> S.PredictionList:
    out = {vid: nms_per_class(ps, req.threshold, req.cross_class)
           for vid, ps in predictions_by_video(req.predictions).items()}
    return S.PredictionList(predictions=predictions_to_schema(out))

