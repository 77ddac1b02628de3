"""File-based pipeline stages behind the service endpoints.

Every stage reads artifacts written by earlier stages plus explicit
arguments, and derives its randomness from the master seed through
`stage_seed`, so stages can be rerun independently and a full run is
byte-reproducible.
"""

from __future__ import annotations

import csv
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ann, dataset, tuner
from .errors import ParseError, VorocpError
from .fem import EigenResult, poincare_constant
from .geometry import (MetricVector, METRIC_LABELS, Polygon, compute_metrics,
                       load_polygons, sample_points, save_polygons, voronoi_cells)

LABEL_HEADER = ("polygon_id", "lambda1", "c_p", "dof_count", "h_used")
TUNE_HEADER = ("trial", "L", "N1", "N2", "N3", "eta", "p", "t0", "min_val_loss", "best_epoch")
COMPARE_HEADER = ("model", "min_val_loss", "best_epoch", "test_loss",
                  "train_seconds", "test_seconds")
HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "sparsity")
PREDICTION_HEADER = ("polygon_id", "c_p_pred")
PLOT_HEADER = ("model", "epoch", "val_loss")


def stage_seed(master_seed: int, tag: str) -> int:
    """Per-stage seed: master seed folded with a CRC32 of the stage tag."""
    return (int(master_seed) ^ zlib.crc32(tag.encode("utf-8"))) & 0x7FFFFFFF


@dataclass
class PipelineConfig:
    seed: int
    n_points: int = 100
    domain_side: float = 1.0
    test_n_points: int = 65
    test_side: float = 0.5
    mesh_divisor: float = 20.0
    z_threshold: float = 2.0
    validation_fraction: float = 0.3
    hidden_sizes: tuple[int, ...] = (385, 385, 385)
    eta: float = 1e-4
    epochs: int = 500
    dropout_p: float = 0.0
    pruning: ann.PruneSchedule | None = None
    out_dir: str = "."
    workers: int | None = None

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


# ---------------------------------------------------------------- generate

def run_generate(seed: int, n_points: int, side: float, path, tag: str = "train") -> dict:
    """Sample points, keep the bounded Voronoi cells, write the polygon file."""
    points = sample_points(n_points, side, stage_seed(seed, f"generate:{tag}"))
    cells = voronoi_cells(points)
    save_polygons(cells, path, header={
        "seed": seed, "n_points": n_points, "side": repr(side), "tag": tag,
    })
    result = {"polygon_count": len(cells), "path": str(path)}
    if not cells:
        result["warning"] = "no bounded Voronoi cells for this sample"
    return result


# ------------------------------------------------------------------- label

def _label_one(args) -> tuple[int, EigenResult | None, str | None]:
    pid, vertices, mesh_divisor = args
    try:
        return pid, poincare_constant(Polygon(vertices), mesh_divisor), None
    except VorocpError as exc:
        return pid, None, str(exc)


def run_label(polygons_path, labels_path, mesh_divisor: float = 20.0,
              workers: int | None = None) -> dict:
    """Label every polygon with its Poincaré constant, in parallel.

    Failures are recorded and skipped; the CSV is ordered by polygon id
    so the output is byte-stable regardless of worker scheduling.
    """
    polygons, _ = load_polygons(polygons_path)
    jobs = [(pid, poly.vertices, mesh_divisor) for pid, poly in enumerate(polygons)]
    workers = workers if workers is not None else (os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_label_one, jobs, chunksize=4))
    else:
        outcomes = [_label_one(job) for job in jobs]
    outcomes.sort(key=lambda item: item[0])
    failures = [{"polygon_id": pid, "error": err} for pid, _, err in outcomes if err]
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for pid, res, err in outcomes:
            if err is None:
                writer.writerow([pid, repr(res.lambda1), repr(res.c_p),
                                 res.dof_count, repr(res.h_used)])
    return {"rows": len(outcomes) - len(failures), "failures": failures,
            "path": str(labels_path)}


def load_labels(path) -> list[tuple[int, EigenResult]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != LABEL_HEADER:
            raise ParseError(f"expected header {','.join(LABEL_HEADER)}", path=str(path), line=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                out.append((int(rec[0]), EigenResult(
                    lambda1=float(rec[1]), c_p=float(rec[2]),
                    dof_count=int(rec[3]), h_used=float(rec[4]))))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad label row: {exc}", path=str(path), line=lineno) from exc
    return out


# -------------------------------------------------------------- preprocess

def run_preprocess(polygons_path, labels_path, features_path,
                   correlations_path=None, z_threshold: float = 2.0) -> dict:
    """Metrics + labels -> selected-feature table with outliers removed."""
    polygons, _ = load_polygons(polygons_path)
    labels = load_labels(labels_path)
    labeled_ids = {pid for pid, _ in labels}
    unknown = labeled_ids - set(range(len(polygons)))
    if unknown:
        raise ParseError(f"labels reference unknown polygon ids {sorted(unknown)}",
                         path=str(labels_path))
    metrics = [(pid, compute_metrics(poly)) for pid, poly in enumerate(polygons)
               if pid in labeled_ids]
    raw = dataset.build_raw(metrics, [(pid, res.c_p) for pid, res in labels])
    if correlations_path is not None and len(raw) >= 3:
        corr = dataset.pearson_correlation(raw, MetricVector.COLUMNS)
        dataset.correlation_csv(corr, [METRIC_LABELS[c] for c in MetricVector.COLUMNS],
                                correlations_path)
    selected = dataset.select_features(raw)
    kept = dataset.remove_outliers(selected, z_threshold)
    dataset.save_csv(kept, features_path)
    mpd_below_se = sum(1 for _, mv in metrics if mv.mpd < mv.se * (1.0 - 1e-12))
    return {
        "rows_in": len(raw),
        "outliers_removed": len(raw) - len(kept),
        "rows_out": len(kept),
        "mpd_below_se": mpd_below_se,
        "path": str(features_path),
    }


# ------------------------------------------------------------------- train

def save_history(history: ann.TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for epoch, (tl, vl, sp) in enumerate(
                zip(history.train_loss, history.val_loss, history.sparsity), start=1):
            writer.writerow([epoch, repr(tl), repr(vl), repr(sp)])


def load_history(path) -> ann.TrainHistory:
    history = ann.TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != HISTORY_HEADER:
            raise ParseError(f"expected header {','.join(HISTORY_HEADER)}", path=str(path), line=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                history.train_loss.append(float(rec[1]))
                history.val_loss.append(float(rec[2]))
                history.sparsity.append(float(rec[3]))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad history row: {exc}", path=str(path), line=lineno) from exc
    return history


def run_train(features_path, model_path, history_path, seed: int,
              hidden_sizes=(385, 385, 385), eta: float = 1e-4, epochs: int = 500,
              validation_fraction: float = 0.3, dropout_p: float = 0.0,
              pruning: ann.PruneSchedule | None = None,
              test_features_path=None) -> dict:
    rows = dataset.load_csv(features_path)
    split = dataset.split(rows, validation_fraction, seed=stage_seed(seed, "split"))
    x_tr, y_tr = dataset.to_arrays(split.train)
    x_val, y_val = dataset.to_arrays(split.validation)
    config = ann.TrainConfig(eta=eta, epochs=epochs, seed=stage_seed(seed, "train"),
                             pruning=pruning, dropout_p=dropout_p)
    model = ann.init(ann.Architecture(tuple(hidden_sizes)), seed=stage_seed(seed, "init"),
                     dropout_p=dropout_p)
    model, history = ann.train(model, x_tr, y_tr, x_val, y_val, config)
    ann.save_model(model, model_path)
    save_history(history, history_path)
    result = {
        "epochs": epochs,
        "train_rows": len(split.train),
        "validation_rows": len(split.validation),
        "final_train_loss": history.train_loss[-1] if epochs else None,
        "min_val_loss": history.min_val_loss if epochs else None,
        "best_epoch": history.best_epoch if epochs else None,
        "final_sparsity": history.sparsity[-1] if epochs else 0.0,
        "model_path": str(model_path),
        "history_path": str(history_path),
    }
    if test_features_path is not None:
        test_rows = dataset.load_csv(test_features_path)
        x_te, y_te = dataset.to_arrays(test_rows)
        result["test_loss"] = ann.loss(ann.predict(model, x_te), y_te)
    return result


# -------------------------------------------------------------------- tune

def run_tune(features_path, results_path, seed: int, budget: int,
             epochs: int = 200, validation_fraction: float = 0.3,
             space: tuner.SearchSpace | None = None) -> dict:
    rows = dataset.load_csv(features_path)
    split = dataset.split(rows, validation_fraction, seed=stage_seed(seed, "split"))
    space = space or tuner.SearchSpace()
    results, best = tuner.random_search(space, budget, epochs, split,
                                        seed=stage_seed(seed, "tune"))
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TUNE_HEADER)
        for r in results:
            widths = list(r.hidden_sizes) + [""] * (3 - len(r.hidden_sizes))
            writer.writerow([
                r.trial, len(r.hidden_sizes), *widths[:3], repr(r.eta),
                "" if r.prune_p is None else repr(r.prune_p),
                "" if r.prune_t0 is None else r.prune_t0,
                repr(r.min_val_loss), r.best_epoch,
            ])
    return {
        "trials": len(results),
        "best": {
            "hidden_sizes": list(best.hidden_sizes),
            "eta": best.eta,
            "prune_p": best.prune_p,
            "prune_t0": best.prune_t0,
            "min_val_loss": best.min_val_loss,
            "best_epoch": best.best_epoch,
        },
        "path": str(results_path),
    }


def run_compare(features_path, test_features_path, results_path, seed: int,
                epochs: int = 500, validation_fraction: float = 0.3) -> dict:
    rows = dataset.load_csv(features_path)
    test_rows = dataset.load_csv(test_features_path)
    split = dataset.split(rows, validation_fraction, seed=stage_seed(seed, "split"))
    table = tuner.compare_models(tuner.standard_variants(), split, test_rows,
                                 seed=stage_seed(seed, "compare"), epochs=epochs)
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER)
        for row in table:
            writer.writerow([row.model, repr(row.min_val_loss), row.best_epoch,
                             repr(row.test_loss), f"{row.train_seconds:.4f}",
                             f"{row.test_seconds:.4f}"])
    return {
        "rows": [{"model": r.model, "min_val_loss": r.min_val_loss,
                  "best_epoch": r.best_epoch, "test_loss": r.test_loss,
                  "failed": r.failed} for r in table],
        "path": str(results_path),
    }


# --------------------------------------------------------------- evaluate

def run_evaluate(model_path, features_path) -> dict:
    model = ann.load_model(model_path)
    rows = dataset.load_csv(features_path)
    x, y = dataset.to_arrays(rows)
    return {"loss": ann.loss(ann.predict(model, x), y), "rows": len(rows)}


# ---------------------------------------------------------------- predict

def predict_polygons(model: ann.MlpModel, polygons) -> list[float]:
    """Metric extraction + feature selection + inference per polygon."""
    preds = []
    for poly in polygons:
        mv = compute_metrics(poly)
        x = np.array([getattr(mv, c) for c in dataset.FEATURE_COLUMNS])
        preds.append(float(ann.predict(model, x[None, :])[0]))
    return preds


def run_predict(model_path, polygons_path, predictions_path=None) -> dict:
    model = ann.load_model(model_path)
    polygons, _ = load_polygons(polygons_path)
    preds = predict_polygons(model, polygons)
    if predictions_path is not None:
        with open(predictions_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PREDICTION_HEADER)
            for pid, value in enumerate(preds):
                writer.writerow([pid, repr(value)])
    return {
        "predictions": [{"polygon_id": pid, "c_p_pred": value}
                        for pid, value in enumerate(preds)],
        "path": None if predictions_path is None else str(predictions_path),
    }


# ------------------------------------------------------------ export-plots

def run_export_plots(histories: list[tuple[str, str]], out_path) -> dict:
    """Long-format validation-loss curves for external plotting."""
    rows = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_HEADER)
        for name, path in histories:
            history = load_history(path)
            for epoch, vl in enumerate(history.val_loss, start=1):
                writer.writerow([name, epoch, repr(vl)])
                rows += 1
    return {"rows": rows, "models": len(histories), "path": str(out_path)}


# ------------------------------------------------------------ full pipeline

def run_full_pipeline(cfg: PipelineConfig) -> dict:
    """Generate, label, preprocess, train, evaluate and predict in one go.

    Test-set artifacts follow the same protocol on the smaller domain.
    Returns the per-stage summaries keyed by stage name.
    """
    paths = {
        "polygons": cfg.path("polygons.txt"),
        "test_polygons": cfg.path("test_polygons.txt"),
        "labels": cfg.path("labels.csv"),
        "test_labels": cfg.path("test_labels.csv"),
        "features": cfg.path("features.csv"),
        "test_features": cfg.path("test_features.csv"),
        "correlations": cfg.path("correlations.csv"),
        "model": cfg.path("model.json"),
        "history": cfg.path("history.csv"),
        "predictions": cfg.path("predictions.csv"),
        "plot_data": cfg.path("val_loss_curves.csv"),
    }
    out = {"paths": paths}
    out["generate"] = run_generate(cfg.seed, cfg.n_points, cfg.domain_side,
                                   paths["polygons"], tag="train")
    out["generate_test"] = run_generate(cfg.seed, cfg.test_n_points, cfg.test_side,
                                        paths["test_polygons"], tag="test")
    out["label"] = run_label(paths["polygons"], paths["labels"],
                             cfg.mesh_divisor, cfg.workers)
    out["label_test"] = run_label(paths["test_polygons"], paths["test_labels"],
                                  cfg.mesh_divisor, cfg.workers)
    out["preprocess"] = run_preprocess(paths["polygons"], paths["labels"],
                                       paths["features"], paths["correlations"],
                                       cfg.z_threshold)
    # test rows keep the same protocol but are never outlier-filtered
    test_polygons, _ = load_polygons(paths["test_polygons"])
    test_labels = load_labels(paths["test_labels"])
    labeled = {pid for pid, _ in test_labels}
    test_metrics = [(pid, compute_metrics(p)) for pid, p in enumerate(test_polygons)
                    if pid in labeled]
    test_raw = dataset.build_raw(test_metrics, [(pid, r.c_p) for pid, r in test_labels])
    dataset.save_csv(dataset.select_features(test_raw), paths["test_features"])

    out["train"] = run_train(paths["features"], paths["model"], paths["history"],
                             cfg.seed, cfg.hidden_sizes, cfg.eta, cfg.epochs,
                             cfg.validation_fraction, cfg.dropout_p, cfg.pruning,
                             test_features_path=paths["test_features"])
    out["evaluate"] = run_evaluate(paths["model"], paths["test_features"])
    out["predict"] = run_predict(paths["model"], paths["polygons"],
                                 paths["predictions"])
    out["export_plots"] = run_export_plots([("model", paths["history"])],
                                           paths["plot_data"])
    return out
