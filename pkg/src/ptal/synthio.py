"""Synthetic corpus generation, point-annotation simulation and file I/O.

Synthetic snippet features stand in for pre-extracted clip features: every
class owns a mean direction, background has its own, and snippets are drawn
around those means with isotropic Gaussian noise.

On-disk layout of a corpus directory::

    annotations.json        list of {video_id, T, gt, points}
    features/<video_id>.csv T rows x D columns
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .types import ActionInstance, FeatureSequence, PointAnnotation, ScoredPrediction

POINT_MODES = ("uniform", "center-gaussian")


@dataclass
class CorpusConfig:
    num_videos: int = 10
    T_range: Tuple[int, int] = (60, 120)
    D: int = 32
    M: int = 3
    instances_per_video: Tuple[int, int] = (1, 4)
    class_separation: float = 4.0
    noise_std: float = 1.0
    seed: int = 0
    instance_len: Tuple[int, int] = (6, 24)
    point_mode: str = "center-gaussian"

    def validate(self):
        if self.num_videos < 1:
            raise ValueError("num_videos must be >= 1")
        for name in ("T_range", "instances_per_video", "instance_len"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name}={lo, hi} is not a nonempty range")
        if self.T_range[0] < 1:
            raise ValueError("T_range must start at >= 1")
        if self.instance_len[0] < 1:
            raise ValueError("instance_len must start at >= 1")
        if self.D < 1 or self.M < 1:
            raise ValueError("D and M must be >= 1")
        for name in ("class_separation", "noise_std"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.point_mode not in POINT_MODES:
            raise ValueError(f"point_mode must be one of {POINT_MODES}")
        # smallest video must hold the largest instance count at minimum length
        n_max = self.instances_per_video[1]
        need = n_max * self.instance_len[0] + max(n_max - 1, 0)
        if need > self.T_range[0]:
            raise ValueError(
                f"infeasible config: {n_max} instances of length >= {self.instance_len[0]} "
                f"separated by >= 1 background snippet need T >= {need}, "
                f"but T_range starts at {self.T_range[0]}"
            )


@dataclass
class Video:
    id: str
    features: FeatureSequence
    gt: List[ActionInstance] = field(default_factory=list)
    points: List[PointAnnotation] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.features.T

    def validate(self):
        T = self.T
        prev_end = -1
        for inst in self.gt:
            if not (0 <= inst.t_s <= inst.t_e < T):
                raise ValueError(f"{self.id}: gt instance {inst} outside [0, {T})")
            if inst.t_s <= prev_end:
                raise ValueError(f"{self.id}: gt instances overlap or are unsorted")
            prev_end = inst.t_e
        validate_points(self.points, T, self.id)


def validate_points(points: Sequence[PointAnnotation], T: int, video_id: str = "?"):
    prev = -1
    for p in points:
        if not (0 <= p.t_p < T):
            raise ValueError(f"{video_id}: annotation t_p={p.t_p} outside [0, T={T})")
        if p.t_p <= prev:
            raise ValueError(f"{video_id}: annotations must be strictly increasing in t_p")
        prev = p.t_p


# ---------------------------------------------------------------------------
# generation


def class_means(config: CorpusConfig) -> np.ndarray:
    """Return an ``(M + 1) x D`` array: one mean per class, background last.

    Directions are orthonormal when ``D >= M + 1`` and scaled so any two means
    are ``class_separation`` apart.
    """
    rng = np.random.default_rng([config.seed, 0])
    k = config.M + 1
    g = rng.standard_normal((config.D, k))
    if config.D >= k:
        q, _ = np.linalg.qr(g)
        dirs = q[:, :k].T
    else:
        dirs = g.T / np.linalg.norm(g.T, axis=1, keepdims=True)
    return dirs * (config.class_separation / math.sqrt(2.0))


def _layout(rng: np.random.Generator, T: int, n: int, len_range) -> List[Tuple[int, int]]:
    lo, hi = len_range
    # cap lengths so n instances plus n-1 separators always fit
    hi = min(hi, (T - (n - 1)) // n)
    if hi < lo:
        raise ValueError(f"cannot fit {n} instances of length >= {lo} into T={T}")
    lengths = rng.integers(lo, hi + 1, size=n)
    slack = T - int(lengths.sum()) - (n - 1)
    gaps = rng.multinomial(slack, np.full(n + 1, 1.0 / (n + 1)))
    gaps[1:n] += 1
    spans, t = [], 0
    for i in range(n):
        t += int(gaps[i])
        # instance of `lengths[i]` snippets occupies [t, t + len - 1]
        spans.append((t, t + int(lengths[i]) - 1))
        t += int(lengths[i])
    return spans


def synthesize_video(video_id: str, T: int, gt: Sequence[ActionInstance], config: CorpusConfig,
                     rng: np.random.Generator) -> Video:
    """Draw features (and simulated points) for a fixed ground-truth layout."""
    means = class_means(config)
    labels = np.full(T, -1)
    for inst in gt:
        labels[inst.t_s:inst.t_e + 1] = inst.class_id
    centers = np.where(labels[:, None] >= 0, means[labels], means[-1])
    feats = centers + config.noise_std * rng.standard_normal((T, config.D))
    point_seed = int(rng.integers(2**63 - 1))
    points = sample_point_annotations(gt, config.point_mode, point_seed)
    video = Video(video_id, FeatureSequence(feats), list(gt), points)
    video.validate()
    return video


def generate_corpus(config: CorpusConfig) -> List[Video]:
    config.validate()
    corpus = []
    for v in range(config.num_videos):
        rng = np.random.default_rng([config.seed, 1, v])
        T = int(rng.integers(config.T_range[0], config.T_range[1] + 1))
        n = int(rng.integers(config.instances_per_video[0], config.instances_per_video[1] + 1))
        spans = _layout(rng, T, n, config.instance_len) if n > 0 else []
        gt = [ActionInstance(t_s, t_e, int(rng.integers(config.M))) for t_s, t_e in spans]
        corpus.append(synthesize_video(f"video_{v:04d}", T, gt, config, rng))
    return corpus


def sample_point_annotations(gt: Sequence[ActionInstance], mode: str = "center-gaussian",
                             seed: int = 0) -> List[PointAnnotation]:
    """Simulate one annotated snippet inside every ground-truth instance."""
    if mode not in POINT_MODES:
        raise ValueError(f"unknown point mode {mode!r}")
    rng = np.random.default_rng(seed)
    points = []
    for inst in sorted(gt, key=lambda g: g.t_s):
        if mode == "uniform":
            t = int(rng.integers(inst.t_s, inst.t_e + 1))
        else:
            mid = 0.5 * (inst.t_s + inst.t_e)
            std = inst.length / 6.0
            t = int(round(mid))
            if std > 0:
                # rejection sampling == truncation to the instance
                while True:
                    t = int(np.floor(rng.normal(mid, std) + 0.5))
                    if inst.t_s <= t <= inst.t_e:
                        break
        points.append(PointAnnotation(t, inst.class_id))
    return points


# ---------------------------------------------------------------------------
# features.csv


def save_features(path, features) -> None:
    data = features.data if isinstance(features, FeatureSequence) else np.asarray(features)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in data:
            writer.writerow([repr(float(x)) for x in row])


def load_features(path, expected_dim=None) -> FeatureSequence:
    rows = []
    width = expected_dim
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValueError(f"{path}: row {r} has {len(row)} columns, expected {width}")
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric value {cell!r} at row {r}, column {c}") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: T=0 not allowed")
    return FeatureSequence(np.array(rows, dtype=np.float64))


# ---------------------------------------------------------------------------
# annotations.json / predictions.json


def _instance_record(inst: ActionInstance) -> dict:
    return {"t_s": inst.t_s, "t_e": inst.t_e, "class_id": inst.class_id}


def annotation_record(video: Video) -> dict:
    return {
        "video_id": video.id,
        "T": video.T,
        "gt": [_instance_record(g) for g in video.gt],
        "points": [{"t_p": p.t_p, "class_id": p.class_id} for p in video.points],
    }


def _require(rec, key, kind, where):
    if key not in rec:
        raise ValueError(f"{where}: missing field {key!r}")
    val = rec[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ValueError(f"{where}: field {key!r} must be an integer, got {val!r}")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ValueError(f"{where}: field {key!r} must be a number, got {val!r}")
    if kind is str and not isinstance(val, str):
        raise ValueError(f"{where}: field {key!r} must be a string, got {val!r}")
    return val


def parse_annotation_record(rec: dict, where="annotations") -> dict:
    """Validate one annotations.json record; returns typed fields."""
    if not isinstance(rec, dict):
        raise ValueError(f"{where}: record must be an object")
    vid = _require(rec, "video_id", str, where)
    where = f"{where}[{vid}]"
    T = _require(rec, "T", int, where)
    if T < 1:
        raise ValueError(f"{where}: T=0 not allowed")
    gt = []
    for i, g in enumerate(rec.get("gt", [])):
        w = f"{where}.gt[{i}]"
        t_s, t_e = _require(g, "t_s", int, w), _require(g, "t_e", int, w)
        cid = g.get("class_id")
        if cid is not None and (isinstance(cid, bool) or not isinstance(cid, int)):
            raise ValueError(f"{w}: class_id must be an integer or null")
        if not (0 <= t_s <= t_e < T):
            raise ValueError(f"{w}: interval [{t_s}, {t_e}] outside [0, T={T})")
        gt.append(ActionInstance(t_s, t_e, cid))
    points = []
    for i, p in enumerate(rec.get("points", [])):
        w = f"{where}.points[{i}]"
        points.append(PointAnnotation(_require(p, "t_p", int, w), _require(p, "class_id", int, w)))
    validate_points(points, T, vid)
    out = {"video_id": vid, "T": T, "gt": gt, "points": points}
    for extra in ("backgrounds",):
        if extra in rec:
            out[extra] = [ActionInstance(b["t_s"], b["t_e"], None) for b in rec[extra]]
    if "epoch_tag" in rec:
        out["epoch_tag"] = rec["epoch_tag"]
    return out


def save_annotations(path, videos: Iterable[Video]) -> None:
    with open(path, "w") as fh:
        json.dump([annotation_record(v) for v in videos], fh, indent=1)


def load_annotations(path) -> List[dict]:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list):
        raise ValueError(f"{path}: expected a list of video records")
    return [parse_annotation_record(r, f"{path}[{i}]") for i, r in enumerate(raw)]


def sort_predictions(records: List[dict]) -> List[dict]:
    return sorted(records, key=lambda r: (r["video_id"], -r["score"], r["t_s"], r["t_e"], r["class_id"]))


def prediction_records(preds_by_video) -> List[dict]:
    """Flatten ``{video_id: [ScoredPrediction]}`` into sorted JSON records."""
    out = []
    for vid, preds in preds_by_video.items():
        for p in preds:
            out.append({"video_id": vid, "t_s": p.t_s, "t_e": p.t_e,
                        "class_id": p.class_id, "score": float(p.score)})
    return sort_predictions(out)


def save_predictions(path, preds_by_video) -> None:
    with open(path, "w") as fh:
        json.dump(prediction_records(preds_by_video), fh, indent=1)


def parse_prediction_records(raw, where="predictions"):
    if not isinstance(raw, list):
        raise ValueError(f"{where}: expected a list of prediction records")
    out = {}
    for i, rec in enumerate(raw):
        w = f"{where}[{i}]"
        if not isinstance(rec, dict):
            raise ValueError(f"{w}: record must be an object")
        vid = _require(rec, "video_id", str, w)
        try:
            pred = ScoredPrediction(_require(rec, "t_s", int, w), _require(rec, "t_e", int, w),
                                    _require(rec, "class_id", int, w), float(_require(rec, "score", float, w)))
        except ValueError as exc:
            if str(exc).startswith(w):
                raise
            raise ValueError(f"{w}: {exc}") from None
        out.setdefault(vid, []).append(pred)
    return out


def load_predictions(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return parse_prediction_records(raw, str(path))


# ---------------------------------------------------------------------------
# corpus directories


def save_corpus(corpus: Sequence[Video], out_dir) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for v in corpus:
        save_features(out / "features" / f"{v.id}.csv", v.features)
    save_annotations(out / "annotations.json", corpus)


def load_corpus(data_dir) -> List[Video]:
    data = Path(data_dir)
    videos = []
    for rec in load_annotations(data / "annotations.json"):
        feats = load_features(data / "features" / f"{rec['video_id']}.csv")
        if feats.T != rec["T"]:
            raise ValueError(f"{rec['video_id']}: features have T={feats.T}, annotations say T={rec['T']}")
        v = Video(rec["video_id"], feats, rec["gt"], rec["points"])
        v.validate()
        videos.append(v)
    return videos


# ---------------------------------------------------------------------------
# flat key = value config files


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(_coerce(p, default[i] if i < len(default) else default[-1]) for i, p in enumerate(parts))
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        if raw.lower() in ("none", "null", ""):
            return None
        try:
            return int(raw)
        except ValueError:
            return float(raw)
    return raw


def read_flat_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":" if ":" in line else None
            if sep is None:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split(sep, 1))
            out[key] = val
    return out


def build_config(cls, values: dict, where="config"):
    """Instantiate dataclass ``cls`` from string values, coercing by field default."""
    proto = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ValueError(f"{where}: unknown key {key!r} (known: {sorted(known)})")
        default = getattr(proto, key)
        try:
            if isinstance(raw, str):
                kwargs[key] = _coerce(raw, default)
            elif isinstance(default, tuple) and isinstance(raw, (list, tuple)):
                kwargs[key] = tuple(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ValueError(f"{where}: bad value for {key!r}: {exc}") from None
    return cls(**kwargs)


def load_corpus_config(path) -> CorpusConfig:
    cfg = build_config(CorpusConfig, read_flat_config(path), str(path))
    cfg.validate()
    return cfg


def write_flat_config(path, config) -> None:
    lines = []
    for f in fields(config):
        val = getattr(config, f.name)
        if isinstance(val, tuple):
            val = ", ".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
