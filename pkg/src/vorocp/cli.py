"""Thin command-line client for the pipeline service.

Commands build a request and POST it to the HTTP API. By default they
talk to an in-process instance of the app, so no server is needed for
local runs; pass --url to target a running `vorocp serve`.
"""

from __future__ import annotations

import json
import os
import warnings

import click
import httpx


def _client(url: str | None):
    if url:
        return httpx.Client(base_url=url, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # starlette flags its httpx test transport
        from fastapi.testclient import TestClient
    from .service import app
    return TestClient(app, raise_server_exceptions=False)


def _post(url: str | None, path: str, payload: dict) -> dict:
    payload = {k: v for k, v in payload.items() if v is not None}
    with _client(url) as client:
        response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _echo(result: dict) -> None:
    click.echo(json.dumps(result, indent=2))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise click.ClickException(f"config file not found: {path}")
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _opt(value, cfg: dict, key: str, default=None, required: bool = False):
    """Flag value, else config-file value, else default."""
    if value is None:
        value = cfg.get(key, default)
    if required and value is None:
        raise click.UsageError(f"--{key.replace('_', '-')} is required "
                               "(as a flag or in the config file)")
    return value


url_option = click.option("--url", default=None, envvar="VOROCP_URL",
                          help="Service base URL; default runs the app in-process.")
config_option = click.option("--config", "config_path", default=None,
                             type=click.Path(), help="TOML or JSON config file.")


@click.group()
def main():
    """Voronoi polygons, their Poincaré constants, and a neural surrogate."""


@main.command()
@click.option("--seed", type=int, default=None, help="Master seed (required).")
@click.option("--n-points", type=int, default=None)
@click.option("--side", type=float, default=None, help="Sampling square side length.")
@click.option("--out", "path", type=click.Path(), default=None, help="Polygon file to write.")
@click.option("--tag", default=None, help="Stage tag (train/test) for seed derivation.")
@url_option
@config_option
def generate(seed, n_points, side, path, tag, url, config_path):
    """Sample points and write the bounded Voronoi cells."""
    cfg = _load_config(config_path)
    result = _post(url, "/generate", {
        "seed": _opt(seed, cfg, "seed", required=True),
        "n_points": _opt(n_points, cfg, "n_points", 100),
        "side": _opt(side, cfg, "side", cfg.get("domain_side", 1.0)),
        "path": _opt(path, cfg, "polygons_path", "polygons.txt"),
        "tag": _opt(tag, cfg, "tag", "train"),
    })
    _echo(result)


@main.command()
@click.option("--polygons", "polygons_path", type=click.Path(), default=None)
@click.option("--out", "labels_path", type=click.Path(), default=None)
@click.option("--mesh-divisor", type=float, default=None)
@click.option("--workers", type=int, default=None)
@url_option
@config_option
def label(polygons_path, labels_path, mesh_divisor, workers, url, config_path):
    """Compute the Poincaré constant of every polygon (FEM)."""
    cfg = _load_config(config_path)
    result = _post(url, "/label", {
        "polygons_path": _opt(polygons_path, cfg, "polygons_path", "polygons.txt"),
        "labels_path": _opt(labels_path, cfg, "labels_path", "labels.csv"),
        "mesh_divisor": _opt(mesh_divisor, cfg, "mesh_divisor", 20.0),
        "workers": _opt(workers, cfg, "workers"),
    })
    _echo(result)


@main.command()
@click.option("--polygons", "polygons_path", type=click.Path(), default=None)
@click.option("--labels", "labels_path", type=click.Path(), default=None)
@click.option("--out", "features_path", type=click.Path(), default=None)
@click.option("--correlations", "correlations_path", type=click.Path(), default=None)
@click.option("--z-threshold", type=float, default=None)
@url_option
@config_option
def preprocess(polygons_path, labels_path, features_path, correlations_path,
               z_threshold, url, config_path):
    """Build the feature table: metrics, selection, outlier removal."""
    cfg = _load_config(config_path)
    result = _post(url, "/preprocess", {
        "polygons_path": _opt(polygons_path, cfg, "polygons_path", "polygons.txt"),
        "labels_path": _opt(labels_path, cfg, "labels_path", "labels.csv"),
        "features_path": _opt(features_path, cfg, "features_path", "features.csv"),
        "correlations_path": _opt(correlations_path, cfg, "correlations_path"),
        "z_threshold": _opt(z_threshold, cfg, "z_threshold", 2.0),
    })
    _echo(result)


def _train_payload(cfg, features_path, model_path, history_path, seed, hidden,
                   eta, epochs, validation_fraction, dropout_p, test_features_path,
                   pruning=None):
    payload = {
        "features_path": _opt(features_path, cfg, "features_path", "features.csv"),
        "model_path": _opt(model_path, cfg, "model_path", "model.json"),
        "history_path": _opt(history_path, cfg, "history_path", "history.csv"),
        "seed": _opt(seed, cfg, "seed", required=True),
        "eta": _opt(eta, cfg, "eta", 1e-4),
        "epochs": _opt(epochs, cfg, "epochs", 500),
        "validation_fraction": _opt(validation_fraction, cfg, "validation_fraction", 0.3),
        "dropout_p": _opt(dropout_p, cfg, "dropout_p", 0.0),
        "test_features_path": _opt(test_features_path, cfg, "test_features_path"),
        "pruning": pruning,
    }
    hidden = _opt(hidden, cfg, "hidden_sizes", "385,385,385")
    if isinstance(hidden, str):
        hidden = [int(x) for x in hidden.split(",") if x.strip()]
    payload["hidden_sizes"] = list(hidden)
    return payload


train_options = [
    click.option("--features", "features_path", type=click.Path(), default=None),
    click.option("--model", "model_path", type=click.Path(), default=None),
    click.option("--history", "history_path", type=click.Path(), default=None),
    click.option("--seed", type=int, default=None, help="Master seed (required)."),
    click.option("--hidden", default=None, help="Comma-separated hidden sizes, e.g. 385,385,385."),
    click.option("--eta", type=float, default=None, help="Adam learning rate."),
    click.option("--epochs", type=int, default=None),
    click.option("--validation-fraction", type=float, default=None),
    click.option("--test-features", "test_features_path", type=click.Path(), default=None,
                 help="Optional labeled test set; reports its loss after training."),
]


def _apply(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@main.command()
@_apply(train_options)
@click.option("--dropout-p", type=float, default=None)
@url_option
@config_option
def train(features_path, model_path, history_path, seed, hidden, eta, epochs,
          validation_fraction, test_features_path, dropout_p, url, config_path):
    """Train the dense network on the feature table."""
    cfg = _load_config(config_path)
    _echo(_post(url, "/train", _train_payload(
        cfg, features_path, model_path, history_path, seed, hidden, eta,
        epochs, validation_fraction, dropout_p, test_features_path)))


@main.command(name="prune-train")
@_apply(train_options)
@click.option("--s-final", type=float, default=None, help="Final sparsity target.")
@click.option("--t0", type=int, default=None, help="Epoch of the first prune step.")
@click.option("--s0", type=float, default=None)
@click.option("--delta-t", type=int, default=None)
@click.option("--n-steps", type=int, default=None)
@url_option
@config_option
def prune_train(features_path, model_path, history_path, seed, hidden, eta, epochs,
                validation_fraction, test_features_path, s_final, t0, s0, delta_t,
                n_steps, url, config_path):
    """Train with magnitude pruning on the linear sparsity schedule."""
    cfg = _load_config(config_path)
    pruning = {
        "s_final": _opt(s_final, cfg, "s_final", 0.67),
        "t0": _opt(t0, cfg, "t0", 78),
        "s0": _opt(s0, cfg, "s0", 0.0),
        "delta_t": _opt(delta_t, cfg, "delta_t", 1),
        "n_steps": _opt(n_steps, cfg, "n_steps", 50),
    }
    eta = _opt(eta, cfg, "eta", 1e-3)
    _echo(_post(url, "/train", _train_payload(
        cfg, features_path, model_path, history_path, seed, hidden, eta,
        epochs, validation_fraction, None, test_features_path, pruning=pruning)))


@main.command()
@click.option("--features", "features_path", type=click.Path(), default=None)
@click.option("--out", "results_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="Master seed (required).")
@click.option("--budget", type=int, default=None, help="Number of random trials.")
@click.option("--epochs", type=int, default=None)
@click.option("--l-choices", default=None, help="Comma-separated layer counts, e.g. 2,3.")
@click.option("--n-range", default=None, help="Width interval lo,hi (inclusive).")
@click.option("--eta-choices", default=None, help="Comma-separated learning rates.")
@click.option("--p-range", default=None, help="Pruning sparsity interval lo,hi.")
@click.option("--t0-range", default=None, help="Pruning start interval lo,hi.")
@url_option
@config_option
def tune(features_path, results_path, seed, budget, epochs, l_choices, n_range,
         eta_choices, p_range, t0_range, url, config_path):
    """Random hyperparameter search over depth, width and learning rate."""
    cfg = _load_config(config_path)
    payload = {
        "features_path": _opt(features_path, cfg, "features_path", "features.csv"),
        "results_path": _opt(results_path, cfg, "results_path", "tune_results.csv"),
        "seed": _opt(seed, cfg, "seed", required=True),
        "budget": _opt(budget, cfg, "budget", 20),
        "epochs": _opt(epochs, cfg, "epochs", 200),
    }
    def _ints(text): return [int(x) for x in str(text).split(",") if str(x).strip()]
    def _floats(text): return [float(x) for x in str(text).split(",") if str(x).strip()]
    l_choices = _opt(l_choices, cfg, "L_choices")
    if l_choices is not None:
        payload["L_choices"] = _ints(l_choices) if isinstance(l_choices, str) else list(l_choices)
    n_range = _opt(n_range, cfg, "N_range")
    if n_range is not None:
        payload["N_range"] = _ints(n_range) if isinstance(n_range, str) else list(n_range)
    eta_choices = _opt(eta_choices, cfg, "eta_choices")
    if eta_choices is not None:
        payload["eta_choices"] = (_floats(eta_choices) if isinstance(eta_choices, str)
                                  else list(eta_choices))
    p_range = _opt(p_range, cfg, "p_range")
    if p_range is not None:
        payload["p_range"] = _floats(p_range) if isinstance(p_range, str) else list(p_range)
    t0_range = _opt(t0_range, cfg, "t0_range")
    if t0_range is not None:
        payload["t0_range"] = _ints(t0_range) if isinstance(t0_range, str) else list(t0_range)
    _echo(_post(url, "/tune", payload))


@main.command()
@click.option("--features", "features_path", type=click.Path(), default=None)
@click.option("--test-features", "test_features_path", type=click.Path(), default=None)
@click.option("--out", "results_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="Master seed (required).")
@click.option("--epochs", type=int, default=None)
@url_option
@config_option
def compare(features_path, test_features_path, results_path, seed, epochs, url, config_path):
    """Train the five standard variants and tabulate their performance."""
    cfg = _load_config(config_path)
    _echo(_post(url, "/compare", {
        "features_path": _opt(features_path, cfg, "features_path", "features.csv"),
        "test_features_path": _opt(test_features_path, cfg, "test_features_path",
                                   "test_features.csv"),
        "results_path": _opt(results_path, cfg, "results_path", "comparison.csv"),
        "seed": _opt(seed, cfg, "seed", required=True),
        "epochs": _opt(epochs, cfg, "epochs", 500),
    }))


@main.command()
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--features", "features_path", type=click.Path(), default=None)
@url_option
@config_option
def evaluate(model_path, features_path, url, config_path):
    """Loss of a saved model on a labeled feature table."""
    cfg = _load_config(config_path)
    _echo(_post(url, "/evaluate", {
        "model_path": _opt(model_path, cfg, "model_path", "model.json"),
        "features_path": _opt(features_path, cfg, "features_path", "features.csv"),
    }))


@main.command()
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--polygons", "polygons_path", type=click.Path(), default=None)
@click.option("--out", "predictions_path", type=click.Path(), default=None)
@url_option
@config_option
def predict(model_path, polygons_path, predictions_path, url, config_path):
    """Predict the constant for every polygon in a polygon file."""
    cfg = _load_config(config_path)
    _echo(_post(url, "/predict", {
        "model_path": _opt(model_path, cfg, "model_path", "model.json"),
        "polygons_path": _opt(polygons_path, cfg, "polygons_path", "polygons.txt"),
        "predictions_path": _opt(predictions_path, cfg, "predictions_path"),
    }))


@main.command(name="export-plots")
@click.option("--history", "histories", multiple=True,
              help="name=path of a training history CSV; repeatable.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@url_option
@config_option
def export_plots(histories, out_path, url, config_path):
    """Merge history files into one long-format validation-loss CSV."""
    cfg = _load_config(config_path)
    entries = list(histories) or cfg.get("histories", [])
    parsed = []
    for entry in entries:
        if isinstance(entry, str):
            name, _, path = entry.partition("=")
            if not path:
                raise click.UsageError(f"--history needs name=path, got {entry!r}")
            parsed.append({"model": name, "path": path})
        else:
            parsed.append({"model": entry["model"], "path": entry["path"]})
    _echo(_post(url, "/export-plots", {
        "histories": parsed,
        "out_path": _opt(out_path, cfg, "plot_data_path", "val_loss_curves.csv"),
    }))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("vorocp.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
