import csv
import filecmp
import math

import numpy as np
import pytest

from vorocp import dataset, pipeline
from vorocp.ann import PruneSchedule
from vorocp.dataset import FeatureRow
from vorocp.errors import ParseError
from vorocp.geometry import Polygon, load_polygons, save_polygons

UNIT_SQUARE = Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


def synthetic_features(path, n=24, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        ic, cc = rng.uniform(0.02, 0.1), rng.uniform(0.1, 0.3)
        apr, er = rng.uniform(0.02, 0.07), rng.uniform(0.1, 0.9)
        mx, iso = rng.uniform(2.0, 3.0), rng.uniform(0.2, 0.9)
        rows.append(FeatureRow(i, ic, cc, apr, er, mx, iso,
                               0.4 * ic + 0.1 * cc + 0.02 * iso))
    dataset.save_csv(rows, path)
    return rows


class TestStageSeed:
    def test_deterministic_and_tag_sensitive(self):
        assert pipeline.stage_seed(7, "generate:train") == pipeline.stage_seed(7, "generate:train")
        assert pipeline.stage_seed(7, "generate:train") != pipeline.stage_seed(7, "generate:test")
        assert pipeline.stage_seed(7, "train") != pipeline.stage_seed(8, "train")

    def test_non_negative(self):
        for seed in (0, 1, 2 ** 31 - 1, 123456789):
            assert 0 <= pipeline.stage_seed(seed, "x") < 2 ** 31


class TestGenerate:
    def test_writes_provenance_and_cells(self, tmp_path):
        out = pipeline.run_generate(9, 100, 1.0, tmp_path / "p.txt")
        assert 80 <= out["polygon_count"] <= 95
        polys, header = load_polygons(tmp_path / "p.txt")
        assert len(polys) == out["polygon_count"]
        assert header["seed"] == "9"
        assert header["n_points"] == "100"

    def test_rerun_identical(self, tmp_path):
        pipeline.run_generate(4, 50, 1.0, tmp_path / "a.txt")
        pipeline.run_generate(4, 50, 1.0, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()

    def test_no_bounded_cells_warns(self, tmp_path, monkeypatch):
        corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        monkeypatch.setattr(pipeline, "sample_points", lambda n, side, seed: corners)
        out = pipeline.run_generate(0, 4, 1.0, tmp_path / "p.txt")
        assert out["polygon_count"] == 0
        assert "warning" in out
        assert load_polygons(tmp_path / "p.txt")[0] == []


class TestLabel:
    def test_unit_square_label(self, tmp_path):
        save_polygons([UNIT_SQUARE], tmp_path / "p.txt")
        out = pipeline.run_label(tmp_path / "p.txt", tmp_path / "l.csv", workers=1)
        assert out["rows"] == 1 and not out["failures"]
        labels = pipeline.load_labels(tmp_path / "l.csv")
        assert labels[0][1].c_p == pytest.approx(1 / math.pi, rel=5e-3)
        assert labels[0][1].h_used == pytest.approx(math.sqrt(2) / 20)

    def test_empty_file_gives_header_only(self, tmp_path):
        save_polygons([], tmp_path / "p.txt")
        out = pipeline.run_label(tmp_path / "p.txt", tmp_path / "l.csv", workers=1)
        assert out["rows"] == 0
        assert (tmp_path / "l.csv").read_text().strip() == ",".join(pipeline.LABEL_HEADER)

    def test_parallel_matches_serial(self, tmp_path):
        pipeline.run_generate(5, 24, 1.0, tmp_path / "p.txt")
        pipeline.run_label(tmp_path / "p.txt", tmp_path / "serial.csv", workers=1)
        pipeline.run_label(tmp_path / "p.txt", tmp_path / "parallel.csv", workers=2)
        assert (tmp_path / "serial.csv").read_text() == (tmp_path / "parallel.csv").read_text()

    def test_convex_bound_holds(self, tmp_path):
        pipeline.run_generate(5, 24, 1.0, tmp_path / "p.txt")
        pipeline.run_label(tmp_path / "p.txt", tmp_path / "l.csv", workers=2)
        polys, _ = load_polygons(tmp_path / "p.txt")
        from vorocp.geometry import diameter
        for pid, res in pipeline.load_labels(tmp_path / "l.csv"):
            assert res.c_p <= diameter(polys[pid]) / math.pi * 1.01


class TestPreprocess:
    def test_feature_csv_and_correlations(self, tmp_path):
        pipeline.run_generate(5, 40, 1.0, tmp_path / "p.txt")
        pipeline.run_label(tmp_path / "p.txt", tmp_path / "l.csv", workers=2)
        out = pipeline.run_preprocess(tmp_path / "p.txt", tmp_path / "l.csv",
                                      tmp_path / "f.csv", tmp_path / "corr.csv")
        assert out["rows_out"] <= out["rows_in"]
        rows = dataset.load_csv(tmp_path / "f.csv")
        assert len(rows) == out["rows_out"]
        with open(tmp_path / "corr.csv") as fh:
            table = list(csv.reader(fh))
        assert table[0] == ["metric", "CC", "IC", "CR", "AR", "APR", "SE", "sSE",
                            "ER", "MPD", "sMPD", "MA", "MX", "ISO"]
        assert len(table) == 14
        assert float(table[1][1]) == pytest.approx(1.0)

    def test_unknown_label_id_rejected(self, tmp_path):
        save_polygons([UNIT_SQUARE], tmp_path / "p.txt")
        (tmp_path / "l.csv").write_text(
            ",".join(pipeline.LABEL_HEADER) + "\n5,9.87,0.318,100,0.07\n")
        with pytest.raises(ParseError):
            pipeline.run_preprocess(tmp_path / "p.txt", tmp_path / "l.csv",
                                    tmp_path / "f.csv")


class TestTrainStage:
    def test_train_and_history(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        out = pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json",
                                 tmp_path / "h.csv", seed=3, hidden_sizes=(16,),
                                 eta=1e-3, epochs=40)
        assert out["min_val_loss"] > 0
        history = pipeline.load_history(tmp_path / "h.csv")
        assert len(history.val_loss) == 40
        assert out["best_epoch"] == history.best_epoch

    def test_history_round_trip(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json", tmp_path / "h.csv",
                           seed=3, hidden_sizes=(8,), eta=1e-3, epochs=10)
        history = pipeline.load_history(tmp_path / "h.csv")
        pipeline.save_history(history, tmp_path / "h2.csv")
        assert (tmp_path / "h.csv").read_text() == (tmp_path / "h2.csv").read_text()

    def test_test_loss_matches_evaluate(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        synthetic_features(tmp_path / "t.csv", n=10, seed=5)
        out = pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json",
                                 tmp_path / "h.csv", seed=3, hidden_sizes=(16,),
                                 eta=1e-3, epochs=30,
                                 test_features_path=tmp_path / "t.csv")
        ev = pipeline.run_evaluate(tmp_path / "m.json", tmp_path / "t.csv")
        assert abs(ev["loss"] - out["test_loss"]) <= 1e-12

    def test_pruned_training(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        out = pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json",
                                 tmp_path / "h.csv", seed=3, hidden_sizes=(16, 16),
                                 eta=1e-3, epochs=30,
                                 pruning=PruneSchedule(s_final=0.5, t0=5, n_steps=10))
        assert out["final_sparsity"] == pytest.approx(0.5, abs=0.02)


class TestPredict:
    def test_predict_on_training_polygons(self, tmp_path):
        pipeline.run_generate(5, 40, 1.0, tmp_path / "p.txt")
        pipeline.run_label(tmp_path / "p.txt", tmp_path / "l.csv", workers=2)
        pipeline.run_preprocess(tmp_path / "p.txt", tmp_path / "l.csv", tmp_path / "f.csv")
        out = pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json",
                                 tmp_path / "h.csv", seed=11, hidden_sizes=(64, 64),
                                 eta=1e-3, epochs=400)
        pred = pipeline.run_predict(tmp_path / "m.json", tmp_path / "p.txt",
                                    tmp_path / "pred.csv")
        # in-sample loss should be within a factor of the validation loss
        rows = {r.polygon_id: r.label_c for r in dataset.load_csv(tmp_path / "f.csv")}
        errs = [(p["c_p_pred"] - rows[p["polygon_id"]]) ** 2
                for p in pred["predictions"] if p["polygon_id"] in rows]
        in_sample = sum(errs) / (2 * len(errs))
        assert in_sample <= out["min_val_loss"] * 10

    def test_predict_deterministic(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json", tmp_path / "h.csv",
                           seed=3, hidden_sizes=(8,), eta=1e-3, epochs=10)
        save_polygons([UNIT_SQUARE], tmp_path / "p.txt")
        a = pipeline.run_predict(tmp_path / "m.json", tmp_path / "p.txt")
        b = pipeline.run_predict(tmp_path / "m.json", tmp_path / "p.txt")
        assert a["predictions"] == b["predictions"]


class TestExportPlots:
    def test_single_history(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        pipeline.run_train(tmp_path / "f.csv", tmp_path / "m.json", tmp_path / "h.csv",
                           seed=3, hidden_sizes=(8,), eta=1e-3, epochs=12)
        out = pipeline.run_export_plots([("dense", tmp_path / "h.csv")],
                                        tmp_path / "plots.csv")
        assert out["rows"] == 12
        with open(tmp_path / "plots.csv") as fh:
            table = list(csv.reader(fh))
        assert table[0] == list(pipeline.PLOT_HEADER)
        assert table[1][:2] == ["dense", "1"]

    def test_multiple_models(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        for name in ("a", "b", "c", "d", "e"):
            pipeline.run_train(tmp_path / "f.csv", tmp_path / f"{name}.json",
                               tmp_path / f"{name}.csv", seed=3, hidden_sizes=(8,),
                               eta=1e-3, epochs=5)
        out = pipeline.run_export_plots(
            [(name, tmp_path / f"{name}.csv") for name in "abcde"],
            tmp_path / "plots.csv")
        assert out["models"] == 5
        assert out["rows"] == 25

    def test_empty_input(self, tmp_path):
        out = pipeline.run_export_plots([], tmp_path / "plots.csv")
        assert out["rows"] == 0
        assert (tmp_path / "plots.csv").read_text().strip() == ",".join(pipeline.PLOT_HEADER)


class TestTuneStage:
    def test_results_csv_schema(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        from vorocp.tuner import SearchSpace
        out = pipeline.run_tune(tmp_path / "f.csv", tmp_path / "r.csv", seed=2,
                                budget=3, epochs=10,
                                space=SearchSpace(L_choices=(1, 2), N_range=(8, 16),
                                                  eta_choices=(1e-3,)))
        assert out["trials"] == 3
        with open(tmp_path / "r.csv") as fh:
            table = list(csv.reader(fh))
        assert table[0] == list(pipeline.TUNE_HEADER)
        assert len(table) == 4

    def test_compare_csv_schema(self, tmp_path):
        synthetic_features(tmp_path / "f.csv")
        synthetic_features(tmp_path / "t.csv", n=8, seed=9)
        import vorocp.tuner as tuner_mod
        tiny = [tuner_mod.ModelVariant("full_dense", (8,), eta=1e-3)]
        real = tuner_mod.standard_variants
        tuner_mod.standard_variants = lambda: tiny
        try:
            out = pipeline.run_compare(tmp_path / "f.csv", tmp_path / "t.csv",
                                       tmp_path / "c.csv", seed=0, epochs=5)
        finally:
            tuner_mod.standard_variants = real
        with open(tmp_path / "c.csv") as fh:
            table = list(csv.reader(fh))
        assert table[0] == list(pipeline.COMPARE_HEADER)
        assert out["rows"][0]["model"] == "full_dense"


class TestFullPipelineDeterminism:
    def test_byte_identical_artifacts(self, tmp_path):
        runs = []
        for name in ("one", "two"):
            cfg = pipeline.PipelineConfig(
                seed=21, n_points=24, test_n_points=12, epochs=25,
                hidden_sizes=(16,), eta=1e-3, out_dir=str(tmp_path / name),
                workers=2)
            (tmp_path / name).mkdir()
            runs.append(pipeline.run_full_pipeline(cfg))
        paths_a, paths_b = runs[0]["paths"], runs[1]["paths"]
        for key in paths_a:
            assert filecmp.cmp(paths_a[key], paths_b[key], shallow=False), key
