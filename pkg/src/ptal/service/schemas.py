"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class Instance(BaseModel):
    t_s: int = Field(ge=0)
    t_e: int = Field(ge=0)
    class_id: Optional[int] = None


class Point(BaseModel):
    t_p: int = Field(ge=0)
    class_id: int = Field(ge=0)


class Prediction(BaseModel):
    video_id: str
    t_s: int = Field(ge=0)
    t_e: int = Field(ge=0)
    class_id: int = Field(ge=0)
    score: float = Field(ge=0.0, le=1.0)


class VideoIn(BaseModel):
    video_id: str
    features: List[List[float]]
    points: List[Point] = []
    gt: List[Instance] = []


class VideoGT(BaseModel):
    video_id: str
    gt: List[Instance]


class GenerateRequest(BaseModel):
    # CorpusConfig fields; omitted keys keep their defaults
    config: Dict[str, object] = {}


class GenerateResponse(BaseModel):
    videos: List[VideoIn]


class ClusterRequest(BaseModel):
    videos: List[VideoIn]
    kappa: float = Field(0.5, ge=0.0)
    max_iters: int = Field(100, gt=0)
    medoid_rule: Literal["pinned", "free"] = "pinned"
    threshold: Literal["otsu", "meanstd"] = "otsu"
    smooth: int = Field(3, ge=1)
    epoch_tag: int = 0


class PseudoLabels(BaseModel):
    video_id: str
    T: int
    points: List[Point]
    gt: List[Instance]  # pseudo action instances, one per point
    backgrounds: List[Instance]
    epoch_tag: int


class ClusterResponse(BaseModel):
    results: List[PseudoLabels]


class TrainRequest(BaseModel):
    videos: List[VideoIn]
    # TrainConfig fields; omitted keys keep their defaults
    config: Dict[str, object] = {}


class TrainResponse(BaseModel):
    checkpoint_b64: str
    metrics: List[Dict[str, Optional[Union[int, float]]]]
    pseudo_history: List[List[Optional[float]]]


class InferRequest(BaseModel):
    checkpoint_b64: str
    videos: List[VideoIn]
    # overrides of the inference-time settings stored in the checkpoint
    overrides: Dict[str, object] = {}


class PredictionList(BaseModel):
    predictions: List[Prediction]


class EvaluateRequest(BaseModel):
    predictions: List[Prediction]
    gt: List[VideoGT]
    grid: Optional[Literal["anet", "thumos"]] = "anet"
    thresholds: Optional[List[float]] = None  # overrides grid when given


class EvaluateResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    thresholds: List[float]
    mAP: List[float]
    average_mAP: float
    per_class_ap: Dict[str, List[float]]


class NMSRequest(BaseModel):
    predictions: List[Prediction]
    threshold: float = Field(0.5, gt=0.0, le=1.0)
    cross_class: bool = False


class Health(BaseModel):
    status: str
    version: str
