"""scikit-learn compatible wrapper around :class:`~edformer.model.EDformer`."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .metrics import mse
from .model import EDformer, ModelConfig
from .train import TrainConfig, predict, train


def _check_windows(X, name="X", length=None, n_variates=None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_all_finite=True,
                    input_name=name)
    if X.ndim != 3:
        raise ValueError(f"{name} must be [n_windows, steps, n_variates], got shape {X.shape}")
    if length is not None and X.shape[1] != length:
        raise ValueError(f"{name} has {X.shape[1]} steps, expected {length}")
    if n_variates is not None and X.shape[2] != n_variates:
        raise ValueError(f"{name} has {X.shape[2]} variates, expected {n_variates}")
    return X


class EDformerForecaster(BaseEstimator):
    """Multivariate direct forecaster: ``X`` [B, L, N] windows to ``y`` [B, H, N].

    Hyperparameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``n_variates`` is inferred from the data in :meth:`fit`.

    >>> est = EDformerForecaster(lookback=8, horizon=4, d_model=8, n_heads=2,
    ...                          n_layers=1, d_ff=16, kernel_size=3, max_epochs=1)
    >>> X = np.random.default_rng(0).normal(size=(5, 8, 2))
    >>> y = np.random.default_rng(1).normal(size=(5, 4, 2))
    >>> est.fit(X, y).predict(X).shape
    (5, 4, 2)
    """

    def __init__(self, lookback=96, horizon=96, d_model=128, n_heads=8, n_layers=2,
                 d_ff=256, kernel_size=25, dropout=0.1, use_decomposition=True,
                 embedding_mode="variate", time_flip=False, embed_trend=False,
                 embedding_depth=1, batch_size=32, learning_rate=1e-4, max_epochs=10,
                 patience=3, max_steps=None, shuffle=True, seed=0):
        self.lookback = lookback
        self.horizon = horizon
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.kernel_size = kernel_size
        self.dropout = dropout
        self.use_decomposition = use_decomposition
        self.embedding_mode = embedding_mode
        self.time_flip = time_flip
        self.embed_trend = embed_trend
        self.embedding_depth = embedding_depth
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_steps = max_steps
        self.shuffle = shuffle
        self.seed = seed

    def _model_config(self, n_variates: int) -> ModelConfig:
        return ModelConfig(
            lookback=self.lookback, horizon=self.horizon, n_variates=n_variates,
            d_model=self.d_model, n_heads=self.n_heads, n_layers=self.n_layers,
            d_ff=self.d_ff, kernel_size=self.kernel_size, dropout=self.dropout,
            use_decomposition=self.use_decomposition, embedding_mode=self.embedding_mode,
            time_flip=self.time_flip, embed_trend=self.embed_trend,
            embedding_depth=self.embedding_depth, seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_windows(X, "X", self.lookback)
        y = _check_windows(y, "y", self.horizon, X.shape[2])
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} windows but y has {len(y)}")
        val = None
        if X_val is not None:
            val = (_check_windows(X_val, "X_val", self.lookback, X.shape[2]),
                   _check_windows(y_val, "y_val", self.horizon, X.shape[2]))
        cfg = TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                          max_epochs=self.max_epochs, patience=self.patience,
                          seed=self.seed, shuffle=self.shuffle, max_steps=self.max_steps)
        self.model_, self.history_ = train(EDformer(self._model_config(X.shape[2])),
                                           (X, y), val, cfg)
        self.n_features_in_ = X.shape[2]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _check_windows(X, "X", self.lookback, self.n_features_in_)
        return predict(self.model_, X)

    def score(self, X, y) -> float:
        """Negative mean squared error, so that larger is better."""
        return -mse(self.predict(X), y)
