"""scikit-learn estimator front-end for the framework's classifiers.

``EnsembleClassifier`` wraps the four training instantiations behind the
standard fit/predict API so they compose with pipelines, grid search and
the rest of the ecosystem. ``decision_function`` exposes the averaged
logits that the black-box attacks and diagnostics consume; the fitted
``model_`` attribute holds the underlying differentiable ensemble.

Features must already live in [0, 1]: the attack budgets and box
constraints elsewhere in the package assume it, so ``fit`` validates
rather than silently rescaling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .ensembles import EnsembleSpec, build
from .nets import ModelSpec
from .training import HyperParams


class EnsembleClassifier(BaseEstimator, ClassifierMixin):
    """Logit-averaging classifier trained with momentum SGD.

    Parameters mirror the training hyperparameter tuple (eta, lam, mu,
    batch) plus the instantiation (kind, n_nodes, alpha) and schedule
    settings. All randomness is keyed by ``seed``; fitting twice with
    identical arguments yields identical models.
    """

    def __init__(self, kind: str = "centralized", n_nodes: int = 1, alpha: float = 0.9,
                 arch: str = "mlp", hidden: tuple = (64, 64), eta: float = 0.1,
                 lam: float = 5e-4, mu: float = 0.9, batch: int = 128, epochs: int = 60,
                 patience: int = 20, val_fraction: float = 0.2, seed: int = 0):
        self.kind = kind
        self.n_nodes = n_nodes
        self.alpha = alpha
        self.arch = arch
        self.hidden = hidden
        self.eta = eta
        self.lam = lam
        self.mu = mu
        self.batch = batch
        self.epochs = epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("features must lie in [0, 1]; rescale before fitting")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]

        ds = Dataset(X, encoded, len(self.classes_), name="fit", seed=self.seed)
        espec = EnsembleSpec(kind=self.kind, n=self.n_nodes, alpha=self.alpha)
        mspec = ModelSpec(self.arch, X.shape[1], len(self.classes_),
                          hidden=tuple(self.hidden))
        hp = HyperParams(eta=self.eta, lam=self.lam, mu=self.mu, batch=self.batch,
                         epochs=self.epochs, patience=self.patience)
        self.model_, self.train_logs_ = build(espec, ds, hp, master_seed=self.seed,
                                              model_spec=mspec,
                                              val_fraction=self.val_fraction)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.model_.logits(X)

    def predict(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]
