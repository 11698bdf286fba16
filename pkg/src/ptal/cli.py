"""Command-line client.

Every subcommand reads its inputs from disk, sends one request to the service
(in-process by default, or to ``--server URL``) and writes the response back
to disk in the documented file formats.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import sys
from pathlib import Path
from typing import List

from . import synthio
from .service import handlers
from .service import schemas as S

log = logging.getLogger("ptal")

ROUTES = {
    "generate": ("/generate", handlers.generate, S.GenerateResponse),
    "cluster": ("/cluster", handlers.cluster, S.ClusterResponse),
    "train": ("/train", handlers.train, S.TrainResponse),
    "infer": ("/infer", handlers.run_inference, S.PredictionList),
    "evaluate": ("/evaluate", handlers.evaluate, S.EvaluateResponse),
}


class RemoteError(RuntimeError):
    pass


def call(op: str, req, server=None, timeout=None):
    path, handler, response_model = ROUTES[op]
    if not server:
        return handler(req)
    import httpx

    resp = httpx.post(server.rstrip("/") + path, json=req.model_dump(mode="json"), timeout=timeout)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise RemoteError(f"server returned {resp.status_code}: {detail}")
    return response_model.model_validate(resp.json())


# ---------------------------------------------------------------------------
# file <-> schema helpers


def _video_in(video_id, features, points=(), gt=()) -> S.VideoIn:
    return S.VideoIn(video_id=video_id, features=features.data.tolist(),
                     points=[S.Point(t_p=p.t_p, class_id=p.class_id) for p in points],
                     gt=[S.Instance(t_s=g.t_s, t_e=g.t_e, class_id=g.class_id) for g in gt])


def read_data_dir(data_dir) -> List[S.VideoIn]:
    """A corpus directory; without annotations.json every ``*.csv`` is one unannotated video."""
    data = Path(data_dir)
    if (data / "annotations.json").exists():
        return [_video_in(v.id, v.features, v.points, v.gt) for v in synthio.load_corpus(data)]
    feats_dir = data / "features" if (data / "features").is_dir() else data
    files = sorted(feats_dir.glob("*.csv"))
    if not files:
        raise ValueError(f"{data}: no annotations.json and no feature CSV files")
    return [_video_in(f.stem, synthio.load_features(f)) for f in files]


def read_cluster_inputs(features_path, annotations_path) -> List[S.VideoIn]:
    records = synthio.load_annotations(annotations_path)
    path = Path(features_path)
    by_id = {r["video_id"]: r for r in records}
    if path.is_dir():
        pairs = [(r, path / f"{r['video_id']}.csv") for r in records]
    elif len(records) == 1:
        pairs = [(records[0], path)]
    elif path.stem in by_id:
        pairs = [(by_id[path.stem], path)]
    else:
        raise ValueError(f"{annotations_path} has {len(records)} videos; none matches {path.name}")
    out = []
    for rec, csv_path in pairs:
        feats = synthio.load_features(csv_path)
        if feats.T != rec["T"]:
            raise ValueError(f"{rec['video_id']}: features have T={feats.T}, annotations say T={rec['T']}")
        out.append(_video_in(rec["video_id"], feats, rec["points"], rec["gt"]))
    return out


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    values = synthio.read_flat_config(args.config) if args.config else {}
    resp = call("generate", S.GenerateRequest(config=values), args.server, args.timeout)
    out = synthio.ensure_dir(args.out)
    videos = [handlers.video_from_schema(v) for v in resp.videos]
    synthio.save_corpus(videos, out)
    print(f"wrote {len(videos)} videos to {out}")


def cmd_cluster(args):
    videos = read_cluster_inputs(args.features, args.annotations)
    req = S.ClusterRequest(videos=videos, kappa=args.kappa, max_iters=args.max_iters,
                           medoid_rule=args.medoid_rule, threshold=args.threshold, smooth=args.smooth)
    resp = call("cluster", req, args.server, args.timeout)
    _write_json(args.out, [r.model_dump() for r in resp.results])
    print(f"wrote pseudo labels for {len(resp.results)} videos to {args.out}")


def cmd_train(args):
    values = synthio.read_flat_config(args.config) if args.config else {}
    req = S.TrainRequest(videos=read_data_dir(args.data), config=values)
    resp = call("train", req, args.server, args.timeout)
    out = synthio.ensure_dir(args.out)
    (out / "checkpoint.npz").write_bytes(base64.b64decode(resp.checkpoint_b64))
    from .pipeline import write_metrics

    write_metrics(out / "metrics.csv", resp.metrics)
    last = resp.metrics[-1] if resp.metrics else {}
    print(f"wrote {out / 'checkpoint.npz'} and {out / 'metrics.csv'} (final total loss {last.get('total')})")


def cmd_infer(args):
    blob = base64.b64encode(Path(args.checkpoint).read_bytes()).decode("ascii")
    req = S.InferRequest(checkpoint_b64=blob, videos=read_data_dir(args.data))
    resp = call("infer", req, args.server, args.timeout)
    _write_json(args.out, [p.model_dump() for p in resp.predictions])
    print(f"wrote {len(resp.predictions)} predictions to {args.out}")


def cmd_eval(args):
    with open(args.pred) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{args.pred}: invalid JSON ({exc})") from None
    preds = synthio.parse_prediction_records(raw, args.pred)
    records = synthio.load_annotations(args.gt)
    req = S.EvaluateRequest(
        predictions=[S.Prediction(video_id=vid, t_s=p.t_s, t_e=p.t_e, class_id=p.class_id, score=p.score)
                     for vid, ps in preds.items() for p in ps],
        gt=[S.VideoGT(video_id=r["video_id"],
                      gt=[S.Instance(t_s=g.t_s, t_e=g.t_e, class_id=g.class_id) for g in r["gt"]])
            for r in records],
        grid=args.grid)
    resp = call("evaluate", req, args.server, args.timeout)
    for t, m in zip(resp.thresholds, resp.mAP):
        print(f"mAP@{t:.2f}\t{m:.4f}")
    print(f"average\t{resp.average_mAP:.4f}")
    if args.csv:
        from .pipeline import EvalReport

        report = EvalReport(resp.thresholds, resp.mAP, {int(k): v for k, v in resp.per_class_ap.items()})
        report.write_csv(args.csv)


def cmd_serve(args):
    import uvicorn

    uvicorn.run("ptal.service.app:app", host=args.host, port=args.port, log_level="info")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptal", description="Point-supervised temporal action localization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        if name != "serve":
            p.add_argument("--server", help="service URL; run in-process when omitted")
            p.add_argument("--timeout", type=float, default=None, help="HTTP timeout in seconds")
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic corpus")
    p.add_argument("--config", help="flat key = value corpus config")
    p.add_argument("--out", required=True)

    p = add("cluster", cmd_cluster, "pseudo labels from point annotations")
    p.add_argument("--features", required=True, help="feature CSV, or a directory of <video_id>.csv")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--medoid-rule", choices=("pinned", "free"), default="pinned")
    p.add_argument("--threshold", choices=("otsu", "meanstd"), default="otsu")
    p.add_argument("--smooth", type=int, default=3)

    p = add("train", cmd_train, "train a model")
    p.add_argument("--config", help="flat key = value training config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "predict action instances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "mAP of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--grid", choices=("anet", "thumos"), default="anet")
    p.add_argument("--csv")

    p = add("serve", cmd_serve, "run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RemoteError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
