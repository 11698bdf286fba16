import json

import numpy as np
import pytest

from ptal import ActionInstance, ScoredPrediction
from ptal.synthio import (CorpusConfig, class_means, generate_corpus, load_annotations, load_corpus,
                          load_corpus_config, load_features, load_predictions, sample_point_annotations,
                          save_corpus, save_features, save_predictions, synthesize_video, write_flat_config)


def _nearest_mean_accuracy(sep, seed, num_videos=300):
    corpus = generate_corpus(CorpusConfig(num_videos=num_videos, class_separation=sep, seed=seed))
    feats, labels = [], []
    for v in corpus:
        for g in v.gt:
            feats.append(v.features.data[g.t_s:g.t_e + 1])
            labels.append(np.full(g.t_e - g.t_s + 1, g.class_id))
    X, y = np.concatenate(feats), np.concatenate(labels)
    half = len(X) // 2
    means = np.stack([X[:half][y[:half] == c].mean(axis=0) for c in range(3)])
    pred = np.argmin(((X[half:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    return float(np.mean(pred == y[half:])), len(X) - half


def test_generate_is_deterministic():
    cfg = CorpusConfig(num_videos=3, seed=11)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    for va, vb in zip(a, b):
        assert va.id == vb.id and va.features == vb.features
        assert va.gt == vb.gt and va.points == vb.points


def test_generated_video_invariants():
    for v in generate_corpus(CorpusConfig(num_videos=20, seed=2)):
        v.validate()
        assert 60 <= v.T <= 120 and 1 <= len(v.gt) <= 4
        for g, p in zip(v.gt, v.points):
            assert g.contains(p.t_p) and g.class_id == p.class_id
        for a, b in zip(v.gt, v.gt[1:]):
            assert b.t_s - a.t_e >= 2  # at least one background snippet between


def test_synthesize_fixed_layout():
    cfg = CorpusConfig(num_videos=1, T_range=(20, 20), instances_per_video=(1, 1))
    v = synthesize_video("v", 20, [ActionInstance(5, 10, 0)], cfg, np.random.default_rng(0))
    assert len(v.gt) == 1 and len(v.points) == 1 and 5 <= v.points[0].t_p <= 10


def test_class_means_are_separated():
    cfg = CorpusConfig(class_separation=4.0, seed=3)
    mu = class_means(cfg)
    d = np.linalg.norm(mu[:, None] - mu[None], axis=-1)
    off = d[~np.eye(len(mu), dtype=bool)]
    assert np.allclose(off, 4.0)


def test_chance_accuracy_without_separation():
    acc, n = _nearest_mean_accuracy(0.0, seed=0, num_videos=600)
    assert n >= 10_000
    assert abs(acc - 1 / 3) <= 0.05


def test_separability_monotone():
    for seed in range(3):
        accs = [_nearest_mean_accuracy(s, seed, num_videos=60)[0] for s in (0.0, 1.0, 4.0)]
        assert accs[0] <= accs[1] <= accs[2], accs


def test_infeasible_config_rejected():
    with pytest.raises(ValueError, match="infeasible"):
        CorpusConfig(T_range=(10, 12), instances_per_video=(4, 4), instance_len=(6, 8)).validate()
    with pytest.raises(ValueError):
        CorpusConfig(noise_std=-1).validate()


def test_point_sampling():
    assert sample_point_annotations([ActionInstance(5, 5, 0)])[0].t_p == 5
    pts = sample_point_annotations([ActionInstance(30, 40, 1), ActionInstance(2, 9, 0)], seed=4)
    assert [p.t_p for p in pts] == sorted(p.t_p for p in pts) and len(pts) == 2
    assert 2 <= pts[0].t_p <= 9 and 30 <= pts[1].t_p <= 40


def test_uniform_points_frequency():
    rng = np.random.default_rng(0)
    counts = np.zeros(10)
    seeds = rng.integers(2**62, size=100_000)
    inst = [ActionInstance(0, 9, 0)]
    for s in seeds:
        counts[sample_point_annotations(inst, "uniform", int(s))[0].t_p] += 1
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_center_gaussian_concentrates():
    inst = [ActionInstance(0, 60, 0)]
    t = np.array([sample_point_annotations(inst, "center-gaussian", s)[0].t_p for s in range(3000)])
    assert abs(t.mean() - 30) < 0.5
    assert 8.5 < t.std() < 11.0  # std d/6 = 10, slightly narrowed by truncation


def test_features_round_trip(tmp_path):
    X = np.random.default_rng(0).normal(size=(7, 3))
    save_features(tmp_path / "f.csv", X)
    assert np.array_equal(load_features(tmp_path / "f.csv").data, X)


def test_features_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1.0,2.0\n3.0,abc\n")
    with pytest.raises(ValueError, match="row 1, column 1"):
        load_features(p)
    p.write_text("")
    with pytest.raises(ValueError, match="T=0 not allowed"):
        load_features(p)
    p.write_text("1,2\n3\n")
    with pytest.raises(ValueError, match="row 1"):
        load_features(p)
    p.write_text("1,2\n")
    with pytest.raises(ValueError, match="expected 3"):
        load_features(p, expected_dim=3)


def test_predictions_round_trip(tmp_path):
    path = tmp_path / "p.json"
    save_predictions(path, {"b": [ScoredPrediction(0, 10, 2, 0.9)], "a": [ScoredPrediction(1, 3, 0, 0.2),
                                                                         ScoredPrediction(4, 8, 1, 0.7)]})
    recs = json.loads(path.read_text())
    assert [(r["video_id"], r["score"]) for r in recs] == [("a", 0.7), ("a", 0.2), ("b", 0.9)]
    assert load_predictions(path)["b"] == [ScoredPrediction(0, 10, 2, 0.9)]
    save_predictions(path, {})
    assert json.loads(path.read_text()) == [] and load_predictions(path) == {}


def test_annotation_validation(tmp_path):
    path = tmp_path / "a.json"
    path.write_text(json.dumps([{"video_id": "v", "T": 5, "gt": [], "points": [{"t_p": 5, "class_id": 0}]}]))
    with pytest.raises(ValueError, match="t_p=5"):
        load_annotations(path)
    path.write_text(json.dumps([{"video_id": "v", "T": 5, "gt": [{"t_s": 1}], "points": []}]))
    with pytest.raises(ValueError, match="t_e"):
        load_annotations(path)
    path.write_text("{not json")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_annotations(path)


def test_corpus_round_trip(tmp_path):
    corpus = generate_corpus(CorpusConfig(num_videos=3, seed=5))
    save_corpus(corpus, tmp_path)
    back = load_corpus(tmp_path)
    assert [v.id for v in back] == [v.id for v in corpus]
    for a, b in zip(corpus, back):
        assert a.features == b.features and a.gt == b.gt and a.points == b.points


def test_flat_config_round_trip(tmp_path):
    cfg = CorpusConfig(num_videos=4, T_range=(30, 50), noise_std=0.25, point_mode="uniform")
    write_flat_config(tmp_path / "c.cfg", cfg)
    assert load_corpus_config(tmp_path / "c.cfg") == cfg
    (tmp_path / "bad.cfg").write_text("nonsense = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_corpus_config(tmp_path / "bad.cfg")

