"""Poincare constants for Voronoi polygons: FEM labels, a neural surrogate, and a service."""

__version__ = "0.1.0"

from .geometry import (Circle, MetricVector, Point2, Polygon, area, compute_metrics,
                       diameter, inner_angles, inscribed_circle, isotropy,
                       load_polygons, perimeter, sample_points, save_polygons,
                       smallest_enclosing_circle, voronoi_cells)
from .fem import EigenResult, TriMesh, assemble, poincare_constant, \
    smallest_positive_eigenvalue, triangulate
from .dataset import (FEATURE_COLUMNS, FeatureRow, RawRow, SplitDataset, build_raw,
                      load_csv, pearson_correlation, remove_outliers, save_csv,
                      select_features, split)
from .ann import (Architecture, MlpModel, PruneSchedule, TrainConfig, TrainHistory,
                  adam_step, forward, gradients, init, load_model, loss, predict,
                  prune_step, save_model, size_matched_depth, sparsity_at, train)
from .tuner import (ModelVariant, SearchSpace, TrialResult, compare_models,
                    random_search, standard_variants)
from .pipeline import PipelineConfig, run_full_pipeline, stage_seed
