"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.
"""

import hashlib
import math
import pickle
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ptal import ActionInstance, PointAnnotation, ScoredPrediction  # noqa: E402
from ptal.apn import generate_proposals  # noqa: E402
from ptal.losses import ctr_loss_grad  # noqa: E402
from ptal.pipeline import (ANET_GRID, THUMOS_GRID, TrainConfig, average_precision, evaluate,  # noqa: E402
                           infer_corpus, nms, train)
from ptal.pseudo import cluster_video, optimal_split  # noqa: E402
from ptal.synthio import CorpusConfig, generate_corpus  # noqa: E402

from gradpaths import PATHS, check_path  # noqa: E402
from oracles import (brute_proposals, dist_matrix, dp_objective, exhaustive_objective,  # noqa: E402
                     naive_alternating, naive_map, naive_nms, naive_split, random_eval_corpus,
                     random_instance, random_scored_set)

RESULTS = {}
_CACHE = {}

# settings pinned by the criteria; lr raised for desk-scale runs (see README)
E2E_LR = 3e-3
E2E_CORPUS = CorpusConfig(num_videos=70, D=32, M=3, class_separation=4.0, seed=0)


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def digest(obj) -> str:
    return hashlib.sha256(pickle.dumps(obj, protocol=4)).hexdigest()


# ---------------------------------------------------------------------------
# criterion runners; each returns (ok, detail, payload for determinism)


def run_gradients():
    start = time.perf_counter()
    worst = max(check_path(path, seed) for path in PATHS for seed in range(5))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed <= 60
    return ok, f"max relative error {worst:.2e} over {len(PATHS)} paths x 5 seeds, {elapsed:.1f}s", worst


def run_clustering():
    start = time.perf_counter()
    split_ok = pinned_eq = free_eq = 0
    below = 0
    invariant_failures = []
    outputs = []
    for seed in range(100):
        X, anchors = random_instance(seed, T_max=200, k_max=5)
        rng = np.random.default_rng([seed, 1])
        ml, mr = sorted(rng.choice(len(X), size=2, replace=False).tolist())
        split_ok += optimal_split(X, ml, mr, ml, mr) == naive_split(X, ml, mr, ml, mr)
        D = dist_matrix(X)
        points = [PointAnnotation(t, 0) for t in anchors]
        for rule in ("pinned", "free"):
            st = cluster_video(X, points, medoid_rule=rule)
            outputs.append((st.medoids, st.splits, st.history))
            if rule == "pinned":
                best = dp_objective(D, anchors, "pinned")
                pinned_eq += abs(st.objective - best) <= 1e-9
                below += st.objective < best - 1e-9
            else:
                free_eq += abs(st.objective - naive_alternating(D, anchors, "free")) <= 1e-9
            problem = cluster_invariant_problem(st, anchors, len(X))
            if problem:
                invariant_failures.append((seed, rule, problem))
    # the DP oracle is itself checked against literal enumeration on small cases
    dp_ok = all(abs(dp_objective(D, a, r) - exhaustive_objective(D, a, r)) <= 1e-9
                for X, a in (random_instance(s, T_max=16, k_max=3) for s in range(20))
                for D in [dist_matrix(X)] for r in ("pinned", "free"))
    elapsed = time.perf_counter() - start
    ok = split_ok == 100 and pinned_eq >= 95 and below == 0 and free_eq >= 95 and dp_ok and elapsed <= 120
    detail = (f"split == naive {split_ok}/100; pinned objective == exhaustive optimum {pinned_eq}/100 "
              f"(below optimum {below}); free rule == naive alternation {free_eq}/100; "
              f"DP oracle == enumeration {dp_ok}; {elapsed:.1f}s")
    _CACHE["invariants"] = invariant_failures
    return ok, detail, outputs


def cluster_invariant_problem(st, anchors, T):
    ranges = st.ranges()
    if ranges[0][0] != 0 or ranges[-1][1] != T - 1:
        return "clusters do not cover the video"
    if any(s2 != e + 1 for (_, e), (s2, _) in zip(ranges, ranges[1:])):
        return "clusters not contiguous"
    if any(not (s <= m <= e and s <= a <= e) for (s, e), m, a in zip(ranges, st.medoids, anchors)):
        return "medoid or annotation outside its cluster"
    if any(b > a + 1e-12 for a, b in zip(st.history, st.history[1:])):
        return "objective increased"
    if st.rounds > 100 or not st.converged:
        return "did not converge within 100 rounds"
    return None


def run_proposals():
    start = time.perf_counter()
    matches = in_range = 0
    outputs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        starts = sorted(set(rng.integers(0, 200, size=rng.integers(0, 51)).tolist()))
        ends = sorted(set(rng.integers(0, 200, size=rng.integers(0, 51)).tolist()))
        d_min = int(rng.integers(1, 10))
        d_max = d_min + int(rng.integers(0, 100))
        out = generate_proposals(starts, ends, d_min, d_max)
        outputs.append(out)
        matches += out == brute_proposals(starts, ends, d_min, d_max)
        in_range += all(d_min <= e - s <= d_max for s, e in out)
    elapsed = time.perf_counter() - start
    ok = matches == 100 and in_range == 100 and elapsed <= 10
    return ok, f"brute-force match {matches}/100, durations in range {in_range}/100, {elapsed:.2f}s", outputs


def run_nms_ap():
    start = time.perf_counter()
    nms_ok = 0
    outputs = []
    for seed in range(100):
        triples = random_scored_set(seed)
        got = [(p.t_s, p.t_e, p.score) for p in nms([ScoredPrediction(s, e, 0, sc) for s, e, sc in triples], 0.5)]
        outputs.append(got)
        nms_ok += got == naive_nms(triples, 0.5)
    eval_ok = 0
    for seed in range(50):
        gts, preds = random_eval_corpus(seed)
        gt, pr = {}, {}
        for vid, s, e, c in gts:
            gt.setdefault(vid, []).append(ActionInstance(s, e, c))
        for vid, s, e, c, sc in preds:
            pr.setdefault(vid, []).append(ScoredPrediction(s, e, c, sc))
        grid = THUMOS_GRID + ANET_GRID
        got = evaluate(pr, gt, grid).mAP
        outputs.append(got)
        eval_ok += all(abs(m - naive_map(preds, gts, t)) <= 1e-12 for t, m in zip(grid, got))
    g = {"v": [ActionInstance(10, 20, 0)]}
    exact = average_precision([("v", ScoredPrediction(10, 20, 0, 0.9))], g, 0.5)
    fp_tp = average_precision([("v", ScoredPrediction(40, 50, 0, 0.9)), ("v", ScoredPrediction(10, 20, 0, 0.5))],
                              g, 0.5)
    elapsed = time.perf_counter() - start
    ok = nms_ok == 100 and eval_ok == 50 and exact == 1.0 and fp_tp == 0.5 and elapsed <= 30
    detail = (f"nms == naive {nms_ok}/100, evaluate == naive {eval_ok}/50, "
              f"hand cases AP={exact} / AP={fp_tp}, {elapsed:.2f}s")
    return ok, detail, outputs


def run_ctr():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    V = rng.normal(size=(5, 4))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    gated = ctr_loss_grad(V, ["start", "end", "start", "end", "background"], [0, 0, 1, 1, None], 0.1)[0]
    no_bg = ctr_loss_grad(V[:4], ["start", "end", "start", "end"], [0, 0, 0, 0], 0.1)[0]
    A = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    per_anchor = ctr_loss_grad(A, ["start", "start", "background"], [0, 0, None], 0.1)[0] / 2
    expected = math.log1p(math.exp(-10))
    elapsed = time.perf_counter() - start
    ok = gated == 0.0 and no_bg == 0.0 and abs(per_anchor - expected) <= 1e-8 and elapsed <= 5
    return ok, (f"gated={gated}, background-free={no_bg}, per-anchor {per_anchor:.6e} vs "
                f"log(1+e^-10)={expected:.6e}"), None


def e2e_run(seed=0, lambda2=0.1, key=None):
    """Train on the first 50 videos, evaluate on the last 20."""
    key = key or (seed, lambda2)
    if key in _CACHE:
        return _CACHE[key]
    corpus = generate_corpus(E2E_CORPUS)
    train_set, test_set = corpus[:50], corpus[50:]
    cfg = TrainConfig(lr=E2E_LR, seed=seed, lambda2=lambda2)
    start = time.perf_counter()
    res = train(train_set, cfg)
    preds = infer_corpus(test_set, res.model, cfg)
    test_map = evaluate(preds, {v.id: v.gt for v in test_set}, [0.5]).mAP[0]
    out = {
        "test_map": test_map,
        "history": res.pseudo_history,
        "params": res.model.state_dict(),
        "preds": preds,
        "seconds": time.perf_counter() - start,
    }
    _CACHE[key] = out
    return out


def run_e2e():
    r = e2e_run()
    first, last = r["history"][0][1], r["history"][-1][1]
    ok = r["test_map"] >= 0.5 and last >= first + 0.05 and r["seconds"] <= 600
    detail = (f"test mAP@0.5 {r['test_map']:.3f} (need >= 0.5); pseudo-label mAP@0.5 {first:.3f} -> {last:.3f} "
              f"(need >= {first + 0.05:.3f}); {r['seconds']:.0f}s")
    return ok, detail, (r["params"], r["preds"], r["history"])


def run_ctr_ablation():
    with_ctr = [e2e_run(s, 0.1)["history"][-1][1] for s in range(3)]
    without = [e2e_run(s, 0.0)["history"][-1][1] for s in range(3)]
    a, b = statistics.median(with_ctr), statistics.median(without)
    detail = (f"median final pseudo mAP@0.5 lambda2=0.1: {a:.3f} {[round(x, 3) for x in with_ctr]} vs "
              f"lambda2=0: {b:.3f} {[round(x, 3) for x in without]}")
    return a >= b, detail, None


# ---------------------------------------------------------------------------
# pytest entry points


def test_criterion_1_gradient_integrity():
    ok, detail, _ = run_gradients()
    assert report(1, ok, detail), detail


def test_criterion_2_clustering_oracle():
    ok, detail, payload = run_clustering()
    _CACHE["c2"] = payload
    assert report(2, ok, detail), detail


def test_criterion_3_clustering_invariants():
    if "invariants" not in _CACHE:
        _CACHE["c2"] = run_clustering()[2]
    failures = _CACHE["invariants"]
    detail = f"{200 - len(failures)}/200 runs (100 trials x 2 medoid rules) satisfy every invariant"
    if failures:
        detail += f"; first failure {failures[0]}"
    assert report(3, not failures, detail), detail


def test_criterion_4_proposal_oracle():
    ok, detail, payload = run_proposals()
    _CACHE["c4"] = payload
    assert report(4, ok, detail), detail


def test_criterion_5_nms_ap_oracles():
    ok, detail, payload = run_nms_ap()
    _CACHE["c5"] = payload
    assert report(5, ok, detail), detail


def test_criterion_6_contrastive_analytics():
    ok, detail, _ = run_ctr()
    assert report(6, ok, detail), detail


def test_criterion_7_end_to_end():
    ok, detail, payload = run_e2e()
    _CACHE["c7"] = payload
    assert report(7, ok, detail), detail


def test_criterion_8_contrastive_ablation():
    ok, detail, _ = run_ctr_ablation()
    assert report(8, ok, detail), detail


def test_criterion_9_determinism():
    first = {
        "2": _CACHE.get("c2") or run_clustering()[2],
        "4": _CACHE.get("c4") or run_proposals()[2],
        "5": _CACHE.get("c5") or run_nms_ap()[2],
        "7": _CACHE.get("c7") or run_e2e()[2],
    }
    r = e2e_run(key="repeat")
    second = {
        "2": run_clustering()[2],
        "4": run_proposals()[2],
        "5": run_nms_ap()[2],
        "7": (r["params"], r["preds"], r["history"]),
    }
    same = {k: digest(first[k]) == digest(second[k]) for k in first}
    detail = "bit-identical reruns: " + ", ".join(f"criterion {k}={v}" for k, v in same.items())
    assert report(9, all(same.values()), detail), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
