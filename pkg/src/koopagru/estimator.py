"""scikit-learn style wrapper around the full detection pipeline."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data_io import Standardizer, make_windows
from .detector import Threshold, calibrate_threshold, evaluate_val_errors, flag, score_test
from .model import ModelConfig, NormFlags
from .trainer import Checkpoint, TrainConfig, build_model, train
from .validation import check_percent, check_series

_MODEL_KEYS = ("alpha", "beta", "lambda_reg", "window", "q", "hidden1", "hidden2",
               "gru_layers_variant", "gru_layers_invariant", "dropout", "squared_loss")
_FLAG_KEYS = ("var_norm", "var_denorm", "inv_norm", "inv_denorm")
_TRAIN_KEYS = ("learning_rate", "batch_size", "max_epochs", "patience", "seed", "grad_clip")


class KoopAGRUDetector(BaseEstimator):
    """Unsupervised anomaly detector for a ``(T, m)`` multivariate series.

    ``fit`` learns the dominant-frequency split, both encoders and both
    Koopman operators on normal data, then sets the threshold so that about
    ``r`` percent of validation points score above it.  Validation data is
    either passed as ``X_val`` or carved from the tail of ``X``.

    Scores and flags cover the leading ``floor(T / window) * window`` steps;
    a trailing partial window is not scored.

    Examples
    --------
    >>> det = KoopAGRUDetector(window=50, q=16, hidden1=16, hidden2=16, max_epochs=5)
    >>> det.fit(X_train)                                # doctest: +SKIP
    >>> flags = det.predict(X_test)                     # doctest: +SKIP
    """

    def __init__(
        self,
        window=100,
        alpha=0.1,
        beta=0.1,
        lambda_reg=1e-3,
        q=128,
        hidden1=100,
        hidden2=128,
        gru_layers_variant=1,
        gru_layers_invariant=1,
        dropout=0.01,
        var_norm=True,
        var_denorm=True,
        inv_norm=True,
        inv_denorm=False,
        squared_loss=False,
        learning_rate=1e-2,
        batch_size=128,
        max_epochs=50,
        patience=10,
        seed=0,
        grad_clip=None,
        r=0.5,
        val_fraction=0.2,
        standardize=True,
    ):
        self.window = window
        self.alpha = alpha
        self.beta = beta
        self.lambda_reg = lambda_reg
        self.q = q
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.gru_layers_variant = gru_layers_variant
        self.gru_layers_invariant = gru_layers_invariant
        self.dropout = dropout
        self.var_norm = var_norm
        self.var_denorm = var_denorm
        self.inv_norm = inv_norm
        self.inv_denorm = inv_denorm
        self.squared_loss = squared_loss
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.grad_clip = grad_clip
        self.r = r
        self.val_fraction = val_fraction
        self.standardize = standardize

    # -- config plumbing ----------------------------------------------------

    def model_config(self) -> ModelConfig:
        kw = {k: getattr(self, k) for k in _MODEL_KEYS}
        return ModelConfig(norm_flags=NormFlags(**{k: getattr(self, k) for k in _FLAG_KEYS}), **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_KEYS})

    @classmethod
    def from_configs(cls, model: ModelConfig, train_cfg: TrainConfig, **extra) -> "KoopAGRUDetector":
        params = {k: getattr(model, k) for k in _MODEL_KEYS}
        params.update({k: getattr(model.norm_flags, k) for k in _FLAG_KEYS})
        params.update(train_cfg.to_dict())
        params.update(extra)
        return cls(**params)

    # -- fitting --------------------------------------------------------------

    def _scale(self, X):
        return self.scaler_.transform(X) if self.scaler_ is not None else X

    def fit(self, X, y=None, X_val=None):
        """Train on ``X`` (assumed normal) and calibrate the threshold.

        ``y`` is accepted for pipeline compatibility and ignored.
        """
        check_percent(self.r)
        model_cfg = self.model_config()
        train_cfg = self.train_config()
        X = check_series(X, min_length=self.window)
        if X_val is None:
            n_val = int(round(X.shape[0] * self.val_fraction))
            X, X_val = X[: X.shape[0] - n_val], X[X.shape[0] - n_val:]
        else:
            X_val = check_series(X_val, n_features=X.shape[1])
        X = check_series(X, min_length=self.window)

        self.n_features_in_ = X.shape[1]
        self.scaler_ = Standardizer().fit(X) if self.standardize else None
        train_w = make_windows(self._scale(X), self.window)
        val_w = make_windows(self._scale(X_val), self.window) if len(X_val) >= self.window else None

        self.model_ = build_model(model_cfg, train_w, seed=self.seed)
        self.checkpoint_, self.report_ = train(self.model_, (train_w, val_w), train_cfg)
        self.selection_ = self.model_.selection
        calib_w = val_w if val_w is not None else train_w
        self.val_scores_ = evaluate_val_errors(self.model_, calib_w)
        self.threshold_ = calibrate_threshold(self.val_scores_, self.r)
        return self

    def recalibrate(self, X_val, r=None):
        """Recompute the threshold from new validation data (and optionally a new ``r``)."""
        check_is_fitted(self, "model_")
        if r is not None:
            self.r = check_percent(r)
        X_val = check_series(X_val, n_features=self.n_features_in_, min_length=self.window)
        self.val_scores_ = evaluate_val_errors(self.model_, make_windows(self._scale(X_val), self.window))
        self.threshold_ = calibrate_threshold(self.val_scores_, self.r)
        return self

    # -- scoring --------------------------------------------------------------

    def anomaly_score(self, X) -> np.ndarray:
        """Per-step prediction error; larger means more anomalous."""
        check_is_fitted(self, "model_")
        X = check_series(X, n_features=self.n_features_in_, min_length=self.window)
        return score_test(self.model_, make_windows(self._scale(X), self.window)).scores

    def score_samples(self, X) -> np.ndarray:
        """Negated anomaly score, following the scikit-learn convention that lower is more abnormal."""
        return -self.anomaly_score(X)

    def decision_function(self, X) -> np.ndarray:
        """``delta - score``: negative values are anomalies."""
        return self.threshold_.delta - self.anomaly_score(X)

    def predict(self, X) -> np.ndarray:
        """Binary flags, 1 where the score is strictly above the threshold."""
        return flag(self.anomaly_score(X), self.threshold_)

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> Path:
        check_is_fitted(self, "model_")
        ckpt = Checkpoint.from_model(self.model_, self.train_config(), **self.checkpoint_.metadata)
        ckpt.metadata["detector"] = {
            "r": self.r,
            "val_fraction": self.val_fraction,
            "standardize": self.standardize,
            "delta": self.threshold_.delta,
            "scaler_mean": None if self.scaler_ is None else self.scaler_.mean_.tolist(),
            "scaler_std": None if self.scaler_ is None else self.scaler_.std_.tolist(),
        }
        path = ckpt.save(path)
        (path / "train_report.json").write_text(json.dumps(self.report_.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "KoopAGRUDetector":
        ckpt = Checkpoint.load(path)
        meta = ckpt.metadata.get("detector", {})
        det = cls.from_configs(
            ckpt.model_config, ckpt.train_config,
            r=meta.get("r", 0.5),
            val_fraction=meta.get("val_fraction", 0.2),
            standardize=meta.get("standardize", True),
        )
        det.model_ = ckpt.build_model()
        det.checkpoint_ = ckpt
        det.selection_ = ckpt.selection
        det.n_features_in_ = ckpt.n_channels
        if meta.get("scaler_mean") is not None:
            det.scaler_ = Standardizer()
            det.scaler_.mean_ = np.asarray(meta["scaler_mean"])
            det.scaler_.std_ = np.asarray(meta["scaler_std"])
        else:
            det.scaler_ = None
        if "delta" in meta:
            det.threshold_ = Threshold(float(meta["delta"]), float(det.r))
        return det
