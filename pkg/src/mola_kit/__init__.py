"""Last-layer Laplace mixtures for small ReLU classifiers.

Train an ensemble of MAP networks, wrap each last layer in a Gaussian
posterior (full, Kronecker-factored, or diagonal curvature), predict with
the weighted mixture via the probit rule or Monte Carlo, tune the prior
precision post hoc, score calibration and outlier detection, and check the
asymptotic confidence ceilings of bias-free networks.
"""

from .datasets import ShiftSpec, apply_shift, make_blobs, make_ood
from .estimators import DeepEnsembleClassifier, MlpClassifier, MolaClassifier
from .laplace import (
    LaplaceComponent,
    OutputGaussian,
    fit,
    ggn_diag,
    ggn_full,
    ggn_kfac,
    mc_predict,
    output_gaussian,
    probit_predict,
    refit,
)
from .metrics import MetricsReport, PredictionBatch, auroc, evaluate
from .mixture import (
    MixtureWeights,
    MolaModel,
    assemble,
    de_predict,
    map_predict,
    mola_predict,
    weights_evidence,
    weights_uniform,
)
from .nn import Dataset, Mlp, MlpConfig, TrainConfig, train_ensemble, train_map
from .tuning import TuneConfig, tune_prior_precision

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DeepEnsembleClassifier",
    "LaplaceComponent",
    "MetricsReport",
    "MixtureWeights",
    "Mlp",
    "MlpClassifier",
    "MlpConfig",
    "MolaClassifier",
    "MolaModel",
    "OutputGaussian",
    "PredictionBatch",
    "ShiftSpec",
    "TrainConfig",
    "TuneConfig",
    "apply_shift",
    "assemble",
    "auroc",
    "de_predict",
    "evaluate",
    "fit",
    "ggn_diag",
    "ggn_full",
    "ggn_kfac",
    "make_blobs",
    "make_ood",
    "map_predict",
    "mc_predict",
    "mola_predict",
    "output_gaussian",
    "probit_predict",
    "refit",
    "train_ensemble",
    "train_map",
    "tune_prior_precision",
    "weights_evidence",
    "weights_uniform",
]
