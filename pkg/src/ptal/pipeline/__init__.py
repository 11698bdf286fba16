"""Training, inference, post-processing and evaluation."""

from .config import TrainConfig, load_train_config, train_config_from_dict
from .inference import infer, infer_corpus, score_proposals
from .metrics import (ANET_GRID, GRIDS, THUMOS_GRID, EvalReport, average_precision, evaluate, nms,
                      nms_per_class, pseudo_label_map)
from .training import (METRIC_COLUMNS, NonFiniteLoss, TrainResult, load_model, save_model, train,
                       video_objective, write_metrics)

__all__ = [
    "ANET_GRID", "GRIDS", "THUMOS_GRID", "EvalReport", "METRIC_COLUMNS", "NonFiniteLoss", "TrainConfig",
    "TrainResult", "average_precision", "evaluate", "infer", "infer_corpus", "load_model",
    "load_train_config", "nms", "nms_per_class", "pseudo_label_map", "save_model", "score_proposals",
    "train", "train_config_from_dict", "video_objective", "write_metrics",
]
