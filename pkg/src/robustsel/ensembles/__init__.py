"""Native tree-ensemble classifiers: bagged Gini forest, level-wise and
leaf-wise (GOSS) histogram gradient boosting, and a cyclic boosted GAM."""

from robustsel.ensembles.binning import bin_matrix, build_histogram_bins
from robustsel.ensembles.config import DEFAULT_GRIDS, FAMILIES, ModelConfig, expand_grid
from robustsel.ensembles.model import (
    TrainedEnsemble,
    Tree,
    decision_function,
    feature_importances,
    fit,
    gini,
    goss_sample,
    log_loss,
    predict,
    predict_proba,
    shape_contributions,
)
from robustsel.ensembles.serialize import load_model, model_from_dict, model_to_dict, save_model
from robustsel.ensembles.tuning import cv_scores, f1_score, tune

__all__ = [
    "DEFAULT_GRIDS", "FAMILIES", "ModelConfig", "TrainedEnsemble", "Tree", "bin_matrix",
    "build_histogram_bins", "cv_scores", "decision_function", "expand_grid", "f1_score",
    "feature_importances", "fit", "gini", "goss_sample", "load_model", "log_loss",
    "model_from_dict", "model_to_dict", "predict", "predict_proba", "save_model",
    "shape_contributions", "tune",
]
