"""HTTP service exposing the pipeline stages.

Every stage is a POST endpoint whose request model mirrors the stage
arguments; artifacts are exchanged through server-side file paths, and
prediction additionally accepts polygons inline.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, ann, pipeline, tuner
from .errors import VorocpError
from .geometry import Polygon

app = FastAPI(title="vorocp", version=__version__)


@app.exception_handler(VorocpError)
async def _domain_error(request: Request, exc: VorocpError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _missing_file(request: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=400, content={"detail": f"missing file: {exc.filename}"})


class HealthResponse(BaseModel):
    status: str
    version: str


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


class PruningSpec(BaseModel):
    s_final: float
    t0: int
    s0: float = 0.0
    delta_t: int = 1
    n_steps: int = 50

    def to_schedule(self) -> ann.PruneSchedule:
        return ann.PruneSchedule(s_final=self.s_final, t0=self.t0, s0=self.s0,
                                 delta_t=self.delta_t, n_steps=self.n_steps)


class GenerateRequest(BaseModel):
    seed: int
    path: str
    n_points: int = 100
    side: float = 1.0
    tag: str = "train"


class GenerateResponse(BaseModel):
    polygon_count: int
    path: str
    warning: str | None = None


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest) -> GenerateResponse:
    return GenerateResponse(**pipeline.run_generate(req.seed, req.n_points,
                                                    req.side, req.path, req.tag))


class LabelRequest(BaseModel):
    polygons_path: str
    labels_path: str
    mesh_divisor: float = 20.0
    workers: int | None = None


class LabelFailure(BaseModel):
    polygon_id: int
    error: str


class LabelResponse(BaseModel):
    rows: int
    failures: list[LabelFailure]
    path: str


@app.post("/label", response_model=LabelResponse)
def label(req: LabelRequest) -> LabelResponse:
    return LabelResponse(**pipeline.run_label(req.polygons_path, req.labels_path,
                                              req.mesh_divisor, req.workers))


class PreprocessRequest(BaseModel):
    polygons_path: str
    labels_path: str
    features_path: str
    correlations_path: str | None = None
    z_threshold: float = 2.0


class PreprocessResponse(BaseModel):
    rows_in: int
    outliers_removed: int
    rows_out: int
    mpd_below_se: int
    path: str


@app.post("/preprocess", response_model=PreprocessResponse)
def preprocess(req: PreprocessRequest) -> PreprocessResponse:
    return PreprocessResponse(**pipeline.run_preprocess(
        req.polygons_path, req.labels_path, req.features_path,
        req.correlations_path, req.z_threshold))


class TrainRequest(BaseModel):
    features_path: str
    model_path: str
    history_path: str
    seed: int
    hidden_sizes: list[int] = Field(default=[385, 385, 385])
    eta: float = 1e-4
    epochs: int = 500
    validation_fraction: float = 0.3
    dropout_p: float = 0.0
    pruning: PruningSpec | None = None
    test_features_path: str | None = None


class TrainResponse(BaseModel):
    epochs: int
    train_rows: int
    validation_rows: int
    final_train_loss: float | None
    min_val_loss: float | None
    best_epoch: int | None
    final_sparsity: float
    test_loss: float | None = None
    model_path: str
    history_path: str


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    return TrainResponse(**pipeline.run_train(
        req.features_path, req.model_path, req.history_path, req.seed,
        tuple(req.hidden_sizes), req.eta, req.epochs, req.validation_fraction,
        req.dropout_p, req.pruning.to_schedule() if req.pruning else None,
        req.test_features_path))


class TuneRequest(BaseModel):
    features_path: str
    results_path: str
    seed: int
    budget: int = 20
    epochs: int = 200
    validation_fraction: float = 0.3
    L_choices: list[int] = Field(default=[2, 3])
    N_range: tuple[int, int] = (250, 500)
    eta_choices: list[float] = Field(default=[1e-4, 1e-3, 1e-2, 1e-1])
    p_range: tuple[float, float] | None = None
    t0_range: tuple[int, int] | None = None


class BestTrial(BaseModel):
    hidden_sizes: list[int]
    eta: float
    prune_p: float | None
    prune_t0: int | None
    min_val_loss: float
    best_epoch: int


class TuneResponse(BaseModel):
    trials: int
    best: BestTrial
    path: str


@app.post("/tune", response_model=TuneResponse)
def tune(req: TuneRequest) -> TuneResponse:
    space = tuner.SearchSpace(
        L_choices=tuple(req.L_choices), N_range=tuple(req.N_range),
        eta_choices=tuple(req.eta_choices),
        p_range=tuple(req.p_range) if req.p_range else None,
        t0_range=tuple(req.t0_range) if req.t0_range else None,
    )
    return TuneResponse(**pipeline.run_tune(
        req.features_path, req.results_path, req.seed, req.budget,
        req.epochs, req.validation_fraction, space))


class CompareRequest(BaseModel):
    features_path: str
    test_features_path: str
    results_path: str
    seed: int
    epochs: int = 500
    validation_fraction: float = 0.3


class CompareRow(BaseModel):
    model: str
    min_val_loss: float
    best_epoch: int
    test_loss: float
    failed: bool


class CompareResponse(BaseModel):
    rows: list[CompareRow]
    path: str


@app.post("/compare", response_model=CompareResponse)
def compare(req: CompareRequest) -> CompareResponse:
    return CompareResponse(**pipeline.run_compare(
        req.features_path, req.test_features_path, req.results_path,
        req.seed, req.epochs, req.validation_fraction))


class EvaluateRequest(BaseModel):
    model_path: str
    features_path: str


class EvaluateResponse(BaseModel):
    loss: float
    rows: int


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest) -> EvaluateResponse:
    return EvaluateResponse(**pipeline.run_evaluate(req.model_path, req.features_path))


class PredictRequest(BaseModel):
    model_path: str
    polygons_path: str | None = None
    polygons: list[list[list[float]]] | None = None   # inline vertex lists, CCW
    predictions_path: str | None = None


class Prediction(BaseModel):
    polygon_id: int
    c_p_pred: float


class PredictResponse(BaseModel):
    predictions: list[Prediction]
    path: str | None


@app.post("/predict", response_model=PredictResponse)
def predict(req: PredictRequest) -> PredictResponse:
    if (req.polygons_path is None) == (req.polygons is None):
        raise ValueError("provide exactly one of polygons_path or polygons")
    if req.polygons_path is not None:
        return PredictResponse(**pipeline.run_predict(
            req.model_path, req.polygons_path, req.predictions_path))
    model = ann.load_model(req.model_path)
    cells = [Polygon(np.asarray(v, dtype=float)) for v in req.polygons]
    values = pipeline.predict_polygons(model, cells)
    return PredictResponse(
        predictions=[Prediction(polygon_id=i, c_p_pred=v) for i, v in enumerate(values)],
        path=None,
    )


class HistoryRef(BaseModel):
    model: str
    path: str


class ExportPlotsRequest(BaseModel):
    histories: list[HistoryRef]
    out_path: str


class ExportPlotsResponse(BaseModel):
    rows: int
    models: int
    path: str


@app.post("/export-plots", response_model=ExportPlotsResponse)
def export_plots(req: ExportPlotsRequest) -> ExportPlotsResponse:
    return ExportPlotsResponse(**pipeline.run_export_plots(
        [(h.model, h.path) for h in req.histories], req.out_path))
