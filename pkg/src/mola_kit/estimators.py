"""scikit-learn style wrappers around the training and Laplace machinery.

These estimators follow the usual fit / predict_proba / predict contract,
expose hyperparameters through ``get_params``/``set_params``, and validate
inputs with sklearn's helpers, so they drop into pipelines, grid searches,
and cross-validation unchanged.  The functional layer underneath stays the
source of truth; the wrappers only adapt calling conventions.

Labels may be arbitrary (strings, non-contiguous ints); they are encoded to
0..C-1 internally and the original values reappear in ``classes_`` and
``predict`` output.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .laplace import fit as fit_laplace
from .mixture import assemble, de_predict, map_predict, mola_predict, weights_evidence
from .nn import Dataset, MlpConfig, TrainConfig, train_ensemble, train_map


def _encode(X, y):
    X, y = check_X_y(X, y, dtype=np.float64)
    classes, encoded = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    return X, encoded.astype(np.int64), classes


class MlpClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward ReLU classifier trained to a MAP estimate.

    Parameters mirror the training configuration; ``seed`` controls both the
    initialization and the shuffle stream, so fits are reproducible.
    """

    def __init__(
        self,
        hidden_dims=(32, 32),
        use_bias=True,
        epochs=150,
        batch_size=32,
        learning_rate=5e-3,
        weight_decay=1.0,
        optimizer="adam",
        seed=0,
    ):
        self.hidden_dims = hidden_dims
        self.use_bias = use_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.seed = seed

    def _configs(self, n_features, n_classes):
        mlp = MlpConfig(
            input_dim=n_features,
            hidden_dims=tuple(self.hidden_dims),
            num_classes=n_classes,
            use_bias=self.use_bias,
            seed=self.seed,
        )
        train = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            seed=self.seed,
        )
        return mlp, train

    def fit(self, X, y):
        X, encoded, classes = _encode(X, y)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        data = Dataset(X, encoded, classes.size)
        mlp_cfg, train_cfg = self._configs(X.shape[1], classes.size)
        self.net_ = train_map(mlp_cfg, train_cfg, data)
        self.train_data_ = data
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return np.stack([map_predict(self.net_, x) for x in X])

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class DeepEnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Uniform average of independently initialized MAP networks."""

    def __init__(
        self,
        n_members=5,
        hidden_dims=(32, 32),
        use_bias=True,
        epochs=150,
        batch_size=32,
        learning_rate=5e-3,
        weight_decay=1.0,
        optimizer="adam",
        seed=0,
    ):
        self.n_members = n_members
        self.hidden_dims = hidden_dims
        self.use_bias = use_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.seed = seed

    def fit(self, X, y):
        X, encoded, classes = _encode(X, y)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        data = Dataset(X, encoded, classes.size)
        mlp_cfg = MlpConfig(
            input_dim=X.shape[1],
            hidden_dims=tuple(self.hidden_dims),
            num_classes=classes.size,
            use_bias=self.use_bias,
            seed=self.seed,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            seed=self.seed,
        )
        self.nets_ = train_ensemble(mlp_cfg, train_cfg, data, self.n_members)
        self.train_data_ = data
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "nets_")
        X = check_array(X, dtype=np.float64)
        return np.stack([de_predict(self.nets_, x) for x in X])

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class MolaClassifier(ClassifierMixin, BaseEstimator):
    """Mixture of last-layer Gaussian posteriors over an ensemble.

    ``fit`` trains ``n_members`` networks, fits one posterior per member at
    ``prior_precision``, and weights members uniformly (or by normalized
    evidence with ``weighting="evidence"``).  ``predict_proba`` integrates
    the softmax against each Gaussian using the closed-form probit rule or
    Monte Carlo, then averages with the mixture weights.
    """

    def __init__(
        self,
        n_members=5,
        structure="kfac",
        prior_precision=1.0,
        weighting="uniform",
        predictive="probit",
        mc_samples=100,
        hidden_dims=(32, 32),
        use_bias=True,
        epochs=150,
        batch_size=32,
        learning_rate=5e-3,
        weight_decay=1.0,
        optimizer="adam",
        seed=0,
    ):
        self.n_members = n_members
        self.structure = structure
        self.prior_precision = prior_precision
        self.weighting = weighting
        self.predictive = predictive
        self.mc_samples = mc_samples
        self.hidden_dims = hidden_dims
        self.use_bias = use_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.seed = seed

    def fit(self, X, y):
        if self.weighting not in ("uniform", "evidence"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.predictive not in ("probit", "mc"):
            raise ValueError(f"unknown predictive {self.predictive!r}")
        X, encoded, classes = _encode(X, y)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        data = Dataset(X, encoded, classes.size)
        mlp_cfg = MlpConfig(
            input_dim=X.shape[1],
            hidden_dims=tuple(self.hidden_dims),
            num_classes=classes.size,
            use_bias=self.use_bias,
            seed=self.seed,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            optimizer=self.optimizer,
            seed=self.seed,
        )
        nets = train_ensemble(mlp_cfg, train_cfg, data, self.n_members)
        components = [
            fit_laplace(net, data, structure=self.structure, prior_precision=self.prior_precision)
            for net in nets
        ]
        weights = weights_evidence(components) if self.weighting == "evidence" else None
        self.model_ = assemble(components, weights)
        self.nets_ = nets
        self.train_data_ = data
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return np.stack(
            [
                mola_predict(
                    self.model_, x, method=self.predictive,
                    n_samples=self.mc_samples, seed=self.seed,
                )
                for x in X
            ]
        )

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def confidence(self, X):
        """Top-class probability per row; the score used for OOD ranking."""
        return self.predict_proba(X).max(axis=1)
