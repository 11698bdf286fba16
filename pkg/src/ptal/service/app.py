"""FastAPI application exposing the pipeline over HTTP."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from . import handlers
from . import schemas as S

app = FastAPI(title="ptal", version=__version__)


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(FloatingPointError)
async def _numeric_error(request: Request, exc: FloatingPointError):
    return JSONResponse(status_code=500, content={"detail": str(exc)})


@app.get("/health", response_model=S.Health)
def health():
    return handlers.health()


@app.post("/generate", response_model=S.GenerateResponse)
def generate(req: S.GenerateRequest):
    return handlers.generate(req)


@app.post("/cluster", response_model=S.ClusterResponse)
def cluster(req: S.ClusterRequest):
    return handlers.cluster(req)


@app.post("/train", response_model=S.TrainResponse)
def train(req: S.TrainRequest):
    return handlers.train(req)


@app.post("/infer", response_model=S.PredictionList)
def infer(req: S.InferRequest):
    return handlers.run_inference(req)


@app.post("/evaluate", response_model=S.EvaluateResponse)
def evaluate(req: S.EvaluateRequest):
    return handlers.evaluate(req)


@app.post("/nms", response_model=S.PredictionList)
def nms(req: S.NMSRequest):
    return handlers.nms(req)
