from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from ..synthio import build_config, read_flat_config


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.1
    N: int = 32
    R: int = 10
    d_min: int = 1
    d_max: Optional[int] = None  # None: the video length
    nms_threshold: float = 0.5
    seed: int = 0
    kappa: float = 0.5
    medoid_rule: str = "pinned"
    bg_threshold: str = "otsu"
    smooth: int = 3
    max_cluster_iters: int = 100
    embed_dim: int = 64
    hidden: int = 64
    max_train_proposals: int = 64
    candidate_threshold: float = 0.5
    sampling: str = "linear"
    boundary_fusion: bool = True
    cross_class_nms: bool = False
    multi_class: bool = False
    class_names: str = ""  # comma separated; empty -> class_<j>
    class_embeddings: str = ""  # optional M x D_e CSV
    num_classes: Optional[int] = None  # None: inferred from the training annotations

    def validate(self):
        for name in ("epochs", "batch_size", "N", "R", "d_min", "max_cluster_iters",
                     "embed_dim", "hidden", "max_train_proposals"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr", "tau", "nms_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.kappa < 0:
            raise ValueError("lambda1, lambda2 and kappa must be >= 0")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.d_max is not None and self.d_max < self.d_min:
            raise ValueError(f"d_min={self.d_min} > d_max={self.d_max}")
        if self.medoid_rule not in ("pinned", "free"):
            raise ValueError("medoid_rule must be 'pinned' or 'free'")
        if self.bg_threshold not in ("otsu", "meanstd"):
            raise ValueError("bg_threshold must be 'otsu' or 'meanstd'")
        if self.sampling not in ("linear", "nearest"):
            raise ValueError("sampling must be 'linear' or 'nearest'")
        return self

    def names(self, M: int):
        if not self.class_names.strip():
            return [f"class_{j}" for j in range(M)]
        names = [n.strip() for n in self.class_names.split(",") if n.strip()]
        if len(names) != M:
            raise ValueError(f"class_names lists {len(names)} names but the corpus has M={M}")
        return names

    def to_dict(self) -> dict:
        return asdict(self)


def load_train_config(path) -> TrainConfig:
    return build_config(TrainConfig, read_flat_config(path), str(path)).validate()


def train_config_from_dict(values: dict) -> TrainConfig:
    return build_config(TrainConfig, dict(values), "config").validate()
