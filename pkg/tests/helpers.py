"""Independent oracles and reference forecasters shared by the tests."""
import numpy as np
from edformer import engine as E
from edformer.model import ModelConfig
from edformer.train import TrainConfig

TOY_L, TOY_H = 24, 12


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


class LinearForecaster:
    """y[b, h, n] = sum_{t, m} W[h, n, t, m] x[b, t, m] + c[h, n]."""

    def __init__(self, W, c=None):
        self.W = np.asarray(W, dtype=np.float64)
        H, N, L, _ = self.W.shape
        self.c = np.zeros((H, N)) if c is None else np.asarray(c, dtype=np.float64)
        self._M = self.W.reshape(H * N, L * N).T

    def forward(self, x):
        x = E.as_tensor(x)
        B, L, N = x.shape
        H = self.W.shape[0]
        return (x.reshape(B, L * N) @ self._M).reshape(B, H, N) + self.c


class Variate0Forecaster:
    """Small fixed MLP reading only variate 0; every output variate shares it."""

    def __init__(self, lookback, horizon, n_variates, hidden=16, seed=0):
        rng = np.random.default_rng(seed)
        self.W1 = rng.normal(0, 1 / np.sqrt(lookback), (lookback, hidden))
        self.W2 = rng.normal(0, 1 / np.sqrt(hidden), (hidden, horizon))
        self.mix = np.linspace(1.0, 0.5, n_variates)
        self.sel = np.zeros((n_variates, 1))
        self.sel[0, 0] = 1.0

    def forward(self, x):
        x = E.as_tensor(x)
        B, L = x.shape[0], x.shape[1]
        # stacked [1, L] rows so each window gets its own gemm call and its
        # result cannot depend on which other windows share the batch
        x0 = (x @ self.sel).reshape(B, 1, L)
        h = E.relu(x0 @ self.W1 + 0.1)
        y = (h @ self.W2).reshape(B, self.W2.shape[1], 1)  # [B, H, 1]
        return y * self.mix


def toy_config(**kw) -> ModelConfig:
    base = dict(lookback=TOY_L, horizon=TOY_H, n_variates=3, d_model=32, n_heads=4,
                n_layers=1, d_ff=64, dropout=0.0, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def toy_train_config(**kw) -> TrainConfig:
    base = dict(batch_size=32, learning_rate=1e-3, max_epochs=100, patience=3,
                max_steps=500, seed=0)
    base.update(kw)
    return TrainConfig(**base)
