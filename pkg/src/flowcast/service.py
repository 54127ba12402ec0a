"""HTTP facade over the runner pipeline."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__, runner
from .data import CsvFormatError
from .schemas import (
    EvalRequest,
    EvalResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    PredictRequest,
    PredictResponse,
    ReproduceRequest,
    ReproduceResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="flowcast", version=__version__)

_CLIENT_ERRORS = (ValueError, CsvFormatError, FileNotFoundError)


def _guarded(fn, *args):
    try:
        return fn(*args)
    except _CLIENT_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest) -> GenerateResponse:
    return _guarded(runner.do_generate, req)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    return _guarded(runner.do_train, req.config)


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest) -> EvalResponse:
    return _guarded(runner.do_eval, req)


@app.post("/predict", response_model=PredictResponse)
def predict(req: PredictRequest) -> PredictResponse:
    return _guarded(runner.do_predict, req)


@app.post("/reproduce-oscillator", response_model=ReproduceResponse)
def reproduce_oscillator(req: ReproduceRequest) -> ReproduceResponse:
    return _guarded(runner.do_reproduce, req)
