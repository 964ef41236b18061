"""Conditionally additive local models.

A CALM scores a row as an intercept plus one univariate shape per feature,
where the shape used for feature ``i`` is selected by a shallow partition
tree over the other features.
"""

__version__ = "0.1.0"

from .bench import evaluate_cv, gen_case
from .fitting import FitConfig, ShapeFunction, ShapeSet, fit_calm_boost, fit_calm_exact_backfit, fit_gam_boost
from .gbdt import GbdtConfig, GbdtModel, gbdt_fit
from .interpret import check_monotonicity, local_contributions, plot_spec, regional_sensitivity, render_svg, vlines_for
from .model import CalmModel, PipelineConfig, count_interactions, train_calm, train_gam
from .partition import PartitionParams, PartitionSet, PartitionTree, learn_partitions
from .tabular import Dataset, FeatureMeta, load_csv

__all__ = [
    "CalmModel", "Dataset", "FeatureMeta", "FitConfig", "GbdtConfig", "GbdtModel", "PartitionParams",
    "PartitionSet", "PartitionTree", "PipelineConfig", "ShapeFunction", "ShapeSet", "check_monotonicity",
    "count_interactions", "evaluate_cv", "fit_calm_boost", "fit_calm_exact_backfit", "fit_gam_boost",
    "gbdt_fit", "gen_case", "learn_partitions", "load_csv", "local_contributions", "plot_spec",
    "regional_sensitivity", "render_svg", "train_calm", "train_gam", "vlines_for",
]
