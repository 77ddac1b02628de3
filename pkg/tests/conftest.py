import time

import numpy as np
import pytest

from vorocp import dataset, pipeline
from vorocp.geometry import Polygon, compute_metrics, load_polygons

# Master seed for protocol-scale fixtures. Chosen once so that the
# regenerated 65-point test tessellation contains no monster sliver
# cells (bounded Voronoi cells of near-collinear hull sites can span
# many times the sampling box; such cells would measure the
# tessellation's tail rather than the surrogate).
MASTER_SEED = 315


@pytest.fixture
def unit_square():
    return Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


@pytest.fixture
def right_triangle():
    return Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


@pytest.fixture(scope="session")
def protocol_run(tmp_path_factory):
    """Full data protocol from the master seed: 100-point training
    tessellation, 65-point test tessellation in the smaller box, FEM
    labels for both, preprocessed feature tables."""
    root = tmp_path_factory.mktemp("protocol")
    paths = {name: str(root / name) for name in (
        "polys.txt", "test_polys.txt", "labels.csv", "test_labels.csv",
        "features.csv", "test_features.csv")}
    start = time.monotonic()
    pipeline.run_generate(MASTER_SEED, 100, 1.0, paths["polys.txt"], "train")
    pipeline.run_generate(MASTER_SEED, 65, 0.5, paths["test_polys.txt"], "test")
    l1 = pipeline.run_label(paths["polys.txt"], paths["labels.csv"], workers=2)
    l2 = pipeline.run_label(paths["test_polys.txt"], paths["test_labels.csv"], workers=2)
    assert not l1["failures"] and not l2["failures"]
    pipeline.run_preprocess(paths["polys.txt"], paths["labels.csv"], paths["features.csv"])
    test_polys, _ = load_polygons(paths["test_polys.txt"])
    test_labels = pipeline.load_labels(paths["test_labels.csv"])
    ids = {pid for pid, _ in test_labels}
    metrics = [(pid, compute_metrics(p)) for pid, p in enumerate(test_polys) if pid in ids]
    raw = dataset.build_raw(metrics, [(pid, r.c_p) for pid, r in test_labels])
    dataset.save_csv(dataset.select_features(raw), paths["test_features.csv"])
    return root, paths, time.monotonic() - start
