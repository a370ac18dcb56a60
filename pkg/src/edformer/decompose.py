"""Moving-average trend / residual seasonal split along the time axis."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import Tensor, as_tensor, div, matmul, sub


class ConfigError(ValueError):
    pass


def replicate_pad(x, left: int, right: int) -> np.ndarray:
    """Extend a 1-D series by repeating its first and last values."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("replicate_pad needs a non-empty 1-D series")
    if left < 0 or right < 0:
        raise ValueError("padding counts must be non-negative")
    return np.concatenate([np.repeat(x[:1], left), x, np.repeat(x[-1:], right)])


def _check_kernel(kernel: int) -> int:
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"decomposition kernel must be a positive odd integer, got {kernel}")
    return int(kernel)


@lru_cache(maxsize=64)
def _window_counts(length: int, kernel: int) -> np.ndarray:
    # Row t counts how often each index appears in the replicate-padded
    # window centred on t.
    half = (kernel - 1) // 2
    C = np.zeros((length, length))
    for t in range(length):
        for j in range(t - half, t + half + 1):
            C[t, min(max(j, 0), length - 1)] += 1.0
    C.setflags(write=False)
    return C


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """The [length, length] operator mapping a series to its trend."""
    return _window_counts(int(length), _check_kernel(kernel)) / kernel


@dataclass
class DecomposedSeries:
    seasonal: Tensor
    trend: Tensor
    kernel: int


def series_decompose(x, kernel: int = 25) -> DecomposedSeries:
    """Split ``x`` of shape [B, L, N] into trend and seasonal parts.

    The trend is the centred moving average with edge replication; the
    seasonal part is the residual ``x - trend``.
    Gradients flow through both outputs when recording on a tape.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"expected [B, L, N] input, got shape {x.shape}")
    kernel = _check_kernel(kernel)
    if kernel == 1:
        trend = x * 1.0
    else:
        trend = div(matmul(_window_counts(x.shape[1], kernel), x), float(kernel))
    return DecomposedSeries(seasonal=sub(x, trend), trend=trend, kernel=int(kernel))


def decompose_array(values: np.ndarray, kernel: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Numpy convenience for a [L, N] matrix: returns ``(trend, seasonal)``."""
    values = np.asarray(values, dtype=np.float64)
    out = series_decompose(values[None], kernel)
    return out.trend.data[0], out.seasonal.data[0]
