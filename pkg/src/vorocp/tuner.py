"""Hyperparameter search over depth, width and learning rate.

Seeded uniform random search; every trial gets its own derived seed so
trials are independent and the whole search replays exactly. A failed
or diverging trial is recorded with an infinite loss and the search
continues.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ann
from .dataset import SplitDataset, FeatureRow, to_arrays
from .errors import DivergenceError


@dataclass(frozen=True)
class SearchSpace:
    L_choices: tuple[int, ...] = (2, 3)
    N_range: tuple[int, int] = (250, 500)          # inclusive interval
    eta_choices: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    p_range: tuple[float, float] | None = None     # pruning final sparsity
    t0_range: tuple[int, int] | None = None        # pruning start epoch

    def __post_init__(self):
        if not self.L_choices or not self.eta_choices:
            raise ValueError("search space must be nonempty")
        lo, hi = self.N_range
        if not (1 <= lo <= hi <= 2048):
            raise ValueError(f"N_range must sit inside [1, 2048], got {self.N_range}")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    hidden_sizes: tuple[int, ...]
    eta: float
    prune_p: float | None
    prune_t0: int | None
    seed: int
    min_val_loss: float
    best_epoch: int


def _trial_seed(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def sample_trial(space: SearchSpace, seed: int, trial: int):
    """Uniform draw from the space with a trial-derived generator."""
    rng = _trial_seed(seed, trial)
    n_layers = int(rng.choice(space.L_choices))
    width = int(rng.integers(space.N_range[0], space.N_range[1] + 1))
    eta = float(rng.choice(space.eta_choices))
    prune_p = prune_t0 = None
    if space.p_range is not None:
        prune_p = float(rng.uniform(*space.p_range))
        prune_t0 = int(rng.integers(space.t0_range[0], space.t0_range[1] + 1))
    return (width,) * n_layers, eta, prune_p, prune_t0


def run_trial(hidden_sizes, eta, prune_p, prune_t0, seed: int,
              split: SplitDataset, epochs: int) -> tuple[float, int]:
    """Train one configuration; (min validation loss, best epoch)."""
    x_tr, y_tr = to_arrays(split.train)
    x_val, y_val = to_arrays(split.validation)
    pruning = None
    if prune_p is not None:
        pruning = ann.PruneSchedule(s_final=prune_p, t0=prune_t0)
    config = ann.TrainConfig(eta=eta, epochs=epochs, seed=seed, pruning=pruning)
    model = ann.init(ann.Architecture(hidden_sizes), seed=seed)
    try:
        _, history = ann.train(model, x_tr, y_tr, x_val, y_val, config)
    except DivergenceError:
        return float("inf"), 0
    return history.min_val_loss, history.best_epoch


def random_search(space: SearchSpace, budget: int, epochs_per_trial: int,
                  split: SplitDataset, seed: int) -> tuple[list[TrialResult], TrialResult]:
    """`budget` independent uniform trials; returns (all results, best)."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    results = []
    for t in range(budget):
        hidden, eta, prune_p, prune_t0 = sample_trial(space, seed, t)
        trial_seed = int(_trial_seed(seed, t).integers(0, 2 ** 31))
        min_loss, best_epoch = run_trial(hidden, eta, prune_p, prune_t0,
                                         trial_seed, split, epochs_per_trial)
        results.append(TrialResult(
            trial=t, hidden_sizes=hidden, eta=eta, prune_p=prune_p,
            prune_t0=prune_t0, seed=trial_seed,
            min_val_loss=min_loss, best_epoch=best_epoch,
        ))
    best = min(results, key=lambda r: r.min_val_loss)
    return results, best


@dataclass(frozen=True)
class ModelVariant:
    name: str
    hidden_sizes: tuple[int, ...]
    eta: float
    dropout_p: float = 0.0
    pruning: ann.PruneSchedule | None = None


def standard_variants() -> list[ModelVariant]:
    """The five architectures compared against each other.

    A dense 3x385 reference, its 30% dropout version, the non-uniform
    width search result, a depth-matched sparse network, and the pruned
    dense network.
    """
    prune = ann.PruneSchedule(s_final=0.67, t0=78)
    deep = ann.size_matched_depth(385, 3, 0.67)
    return [
        ModelVariant("full_dense", (385, 385, 385), eta=1e-4),
        ModelVariant("dropout_30", (385, 385, 385), eta=1e-4, dropout_p=0.3),
        ModelVariant("nonuniform_width", (326, 324, 70), eta=1e-4),
        ModelVariant("deep_sparse", (385,) * deep, eta=1e-3, pruning=prune),
        ModelVariant("pruned_67", (385, 385, 385), eta=1e-3, pruning=prune),
    ]


@dataclass
class ComparisonRow:
    model: str
    min_val_loss: float
    best_epoch: int
    test_loss: float
    train_seconds: float
    test_seconds: float
    failed: bool = False


def compare_models(variants: Sequence[ModelVariant], split: SplitDataset,
                   test_rows: Sequence[FeatureRow], seed: int,
                   epochs: int = 500) -> list[ComparisonRow]:
    """Train every variant and measure it on the held-out test set.

    Wall-clock timings are reported as measured; they are hardware
    dependent and never used as a gate.
    """
    if not variants:
        raise ValueError("need at least one variant")
    x_tr, y_tr = to_arrays(split.train)
    x_val, y_val = to_arrays(split.validation)
    x_te, y_te = to_arrays(list(test_rows))
    rows = []
    for variant in variants:
        config = ann.TrainConfig(eta=variant.eta, epochs=epochs, seed=seed,
                                 pruning=variant.pruning, dropout_p=variant.dropout_p)
        model = ann.init(ann.Architecture(variant.hidden_sizes), seed=seed,
                         dropout_p=variant.dropout_p)
        start = time.perf_counter()
        try:
            model, history = ann.train(model, x_tr, y_tr, x_val, y_val, config)
        except DivergenceError:
            rows.append(ComparisonRow(variant.name, float("inf"), 0, float("inf"),
                                      time.perf_counter() - start, 0.0, failed=True))
            continue
        train_seconds = time.perf_counter() - start
        start = time.perf_counter()
        test_loss = ann.loss(ann.predict(model, x_te), y_te)
        test_seconds = time.perf_counter() - start
        rows.append(ComparisonRow(variant.name, history.min_val_loss, history.best_epoch,
                                  test_loss, train_seconds, test_seconds))
    return rows
