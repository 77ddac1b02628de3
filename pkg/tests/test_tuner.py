import math

import numpy as np
import pytest

from vorocp import dataset
from vorocp.ann import PruneSchedule
from vorocp.dataset import FeatureRow
from vorocp.tuner import (ComparisonRow, ModelVariant, SearchSpace, compare_models,
                          random_search, run_trial, sample_trial, standard_variants)


def synthetic_rows(n=24, seed=0):
    """Feature rows with a smooth, learnable label."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        ic, cc = rng.uniform(0.02, 0.1), rng.uniform(0.1, 0.3)
        apr, er = rng.uniform(0.02, 0.07), rng.uniform(0.1, 0.9)
        mx, iso = rng.uniform(2.0, 3.0), rng.uniform(0.2, 0.9)
        label = 0.4 * ic + 0.1 * cc + 0.02 * iso
        rows.append(FeatureRow(i, ic, cc, apr, er, mx, iso, label))
    return rows


@pytest.fixture(scope="module")
def small_split():
    return dataset.split(synthetic_rows(), 0.3, seed=1)


class TestSearchSpace:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            SearchSpace(L_choices=())

    def test_rejects_huge_widths(self):
        with pytest.raises(ValueError):
            SearchSpace(N_range=(1, 5000))


class TestRandomSearch:
    def test_singleton_space_budget_one(self, small_split):
        space = SearchSpace(L_choices=(2,), N_range=(16, 16), eta_choices=(1e-3,))
        results, best = random_search(space, 1, 30, small_split, seed=5)
        assert len(results) == 1
        assert best.hidden_sizes == (16, 16)
        assert best.eta == 1e-3
        assert best is results[0]

    def test_deterministic(self, small_split):
        space = SearchSpace(L_choices=(1, 2), N_range=(8, 32), eta_choices=(1e-3, 1e-2))
        a, _ = random_search(space, 4, 20, small_split, seed=8)
        b, _ = random_search(space, 4, 20, small_split, seed=8)
        assert a == b

    def test_best_is_minimum(self, small_split):
        space = SearchSpace(L_choices=(1, 2), N_range=(8, 32), eta_choices=(1e-3, 1e-2))
        results, best = random_search(space, 5, 20, small_split, seed=2)
        assert best.min_val_loss == min(r.min_val_loss for r in results)

    def test_best_retrainable_from_stored_seed(self, small_split):
        space = SearchSpace(L_choices=(1, 2), N_range=(8, 32), eta_choices=(1e-3,))
        _, best = random_search(space, 3, 25, small_split, seed=4)
        loss_again, _ = run_trial(best.hidden_sizes, best.eta, best.prune_p,
                                  best.prune_t0, best.seed, small_split, 25)
        assert loss_again == pytest.approx(best.min_val_loss, rel=0.10)

    def test_divergent_trial_recorded_not_raised(self, small_split):
        # the huge learning rate overflows the forward pass
        space = SearchSpace(L_choices=(1,), N_range=(8, 8), eta_choices=(1e200,))
        with np.errstate(over="ignore", invalid="ignore"):
            results, best = random_search(space, 2, 10, small_split, seed=0)
        assert len(results) == 2
        assert all(math.isinf(r.min_val_loss) for r in results)

    def test_regenerated_data_reaches_small_loss(self, protocol_run):
        # realistic depth/width space on FEM-labeled data; the best of a
        # handful of uniform draws lands well under 1e-4
        from conftest import MASTER_SEED
        from vorocp import pipeline

        _, paths, _ = protocol_run
        rows = dataset.load_csv(paths["features.csv"])
        split = dataset.split(rows, 0.3, seed=pipeline.stage_seed(MASTER_SEED, "split"))
        space = SearchSpace(L_choices=(2, 3), N_range=(250, 500))
        _, best = random_search(space, budget=8, epochs_per_trial=200, split=split,
                                seed=pipeline.stage_seed(MASTER_SEED, "tune"))
        assert best.min_val_loss <= 1e-4

    def test_sampling_stays_in_space(self):
        space = SearchSpace(L_choices=(2, 3), N_range=(250, 500),
                            eta_choices=(1e-4, 1e-3), p_range=(0.5, 0.7),
                            t0_range=(75, 125))
        for t in range(50):
            hidden, eta, p, t0 = sample_trial(space, seed=1, trial=t)
            assert len(hidden) in (2, 3)
            assert all(250 <= n <= 500 for n in hidden)
            assert eta in (1e-4, 1e-3)
            assert 0.5 <= p <= 0.7
            assert 75 <= t0 <= 125


class TestCompareModels:
    def test_single_config(self, small_split):
        variants = [ModelVariant("tiny", (8,), eta=1e-3)]
        rows = compare_models(variants, small_split, synthetic_rows(10, seed=9),
                              seed=0, epochs=15)
        assert len(rows) == 1
        assert rows[0].model == "tiny"
        assert rows[0].test_loss > 0
        assert rows[0].train_seconds > 0

    def test_standard_variant_set(self):
        names = [v.name for v in standard_variants()]
        assert names == ["full_dense", "dropout_30", "nonuniform_width",
                         "deep_sparse", "pruned_67"]
        by_name = {v.name: v for v in standard_variants()}
        assert by_name["full_dense"].hidden_sizes == (385, 385, 385)
        assert by_name["nonuniform_width"].hidden_sizes == (326, 324, 70)
        assert by_name["deep_sparse"].hidden_sizes == (385,) * 7
        assert by_name["dropout_30"].dropout_p == 0.3
        assert by_name["pruned_67"].pruning.s_final == 0.67
        assert by_name["pruned_67"].pruning.t0 == 78

    def test_five_variants_produce_table(self, small_split):
        # shrunken stand-ins with the same pruning/dropout structure
        variants = [
            ModelVariant("full_dense", (16, 16, 16), eta=1e-3),
            ModelVariant("dropout_30", (16, 16, 16), eta=1e-3, dropout_p=0.3),
            ModelVariant("nonuniform_width", (14, 12, 6), eta=1e-3),
            ModelVariant("deep_sparse", (16,) * 5, eta=1e-3,
                         pruning=PruneSchedule(s_final=0.67, t0=5, n_steps=10)),
            ModelVariant("pruned_67", (16, 16, 16), eta=1e-3,
                         pruning=PruneSchedule(s_final=0.67, t0=5, n_steps=10)),
        ]
        rows = compare_models(variants, small_split, synthetic_rows(10, seed=9),
                              seed=1, epochs=25)
        assert [r.model for r in rows] == [v.name for v in variants]
        for row in rows:
            assert isinstance(row, ComparisonRow)
            assert row.best_epoch <= 25
            assert not row.failed
