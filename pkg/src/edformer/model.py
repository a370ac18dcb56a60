"""The EDformer network.

Forward path (variate mode, decomposition on)::

    x -> trend / seasonal split
      seasonal -> instance normalization -> one token per variate
               -> encoder blocks -> projection to the horizon -> de-normalization
      trend    -> shared lookback-to-horizon affine map
    forecast = seasonal forecast + trend forecast
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Literal

import numpy as np

from . import engine as E
from .decompose import ConfigError, _check_kernel, series_decompose
from .engine import Tensor

EPS_NORM = 1e-5
LN_EPS = 1e-5


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    n_variates: int = 7
    d_model: int = 128
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 256
    kernel_size: int = 25
    dropout: float = 0.1
    use_decomposition: bool = True
    embedding_mode: Literal["variate", "temporal"] = "variate"
    time_flip: bool = False
    embed_trend: bool = False
    embedding_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("lookback", "horizon", "n_variates", "d_model", "n_heads",
                     "n_layers", "d_ff", "embedding_depth"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        _check_kernel(self.kernel_size)
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.embedding_mode not in ("variate", "temporal"):
            raise ConfigError(f"unknown embedding_mode {self.embedding_mode!r}")
        if self.embedding_depth > 2:
            raise ConfigError("embedding_depth must be 1 or 2")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NormStats:
    mean: Tensor  # [B, 1, N]
    std: Tensor   # [B, 1, N], floored at EPS_NORM


@dataclass
class AttributionContext:
    attention: list[np.ndarray] = field(default_factory=list)  # per layer [B, heads, T, T]
    tokens: list[np.ndarray] = field(default_factory=list)     # per layer [B, T, D]


def instance_normalize(seasonal, eps: float = EPS_NORM) -> tuple[Tensor, NormStats]:
    """Standardize every (batch, variate) slice over time.

    The statistics stay on the tape so gradients reach the raw input.
    """
    x = E.as_tensor(seasonal)
    mu = E.mean(x, axis=1, keepdims=True)
    centered = x - mu
    var = E.mean(centered * centered, axis=1, keepdims=True)
    std = E.floored_sqrt(var, eps)
    return centered / std, NormStats(mu, std)


def denormalize(y, stats: NormStats) -> Tensor:
    y = E.as_tensor(y)
    if y.ndim != 3 or y.shape[0] != stats.mean.shape[0] or y.shape[2] != stats.mean.shape[2]:
        raise E.ShapeError(f"cannot de-normalize {y.shape} with statistics {stats.mean.shape}")
    return y * stats.std + stats.mean


class EDformer:
    """Parameter container plus forward pass. Parameters are ``Tensor`` leaves."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(config.seed)
        self._build()
        self._dropout_rng = np.random.default_rng([config.seed, 1])

    # -- parameters ----------------------------------------------------------

    def _linear(self, name: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.params[f"{name}.weight"] = Tensor(
            self._rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def _norm(self, name: str, width: int) -> None:
        self.params[f"{name}.gain"] = Tensor(np.ones(width), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(width), requires_grad=True)

    def _build(self) -> None:
        c = self.config
        D = c.d_model
        token_in = c.lookback if c.embedding_mode == "variate" else c.n_variates
        self._linear("embed", token_in, D)
        if c.embedding_depth == 2:
            self._linear("embed2", D, D)
        if c.embed_trend and c.use_decomposition:
            self._linear("embed_trend", token_in, D)
        if c.embedding_mode == "temporal":
            bound = 1.0 / math.sqrt(D)
            self.params["pos_embed"] = Tensor(
                self._rng.uniform(-bound, bound, (c.lookback, D)), requires_grad=True)
        for i in range(c.n_layers):
            p = f"layers.{i}"
            for w in ("wq", "wk", "wv", "wo"):
                bound = 1.0 / math.sqrt(D)
                self.params[f"{p}.attn.{w}"] = Tensor(
                    self._rng.uniform(-bound, bound, (D, D)), requires_grad=True)
            self._norm(f"{p}.norm1", D)
            self._linear(f"{p}.ffn1", D, c.d_ff)
            self._linear(f"{p}.ffn2", c.d_ff, D)
            self._norm(f"{p}.norm2", D)
        if c.embedding_mode == "variate":
            self._linear("project", D, c.horizon)
        else:
            self._linear("project", D, c.n_variates)
            self._linear("project_time", c.lookback, c.horizon)
        if c.use_decomposition and not c.embed_trend:
            self._linear("trend", c.lookback, c.horizon)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise KeyError("state dict keys do not match model parameters")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise E.ShapeError(f"{k}: expected {self.params[k].shape}, got {v.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # -- building blocks -----------------------------------------------------

    def _dense(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.weight"] + self.params[f"{name}.bias"]

    def _embed(self, tokens_in: Tensor, name: str = "embed") -> Tensor:
        h = self._dense(name, tokens_in)
        if self.config.embedding_depth == 2 and name == "embed":
            h = self._dense("embed2", E.relu(h))
        return h

    def embed_variates(self, x: Tensor) -> Tensor:
        """[B, L, N] -> [B, N, D]: one token per variate's whole series."""
        return self._embed(E.as_tensor(x).swapaxes(1, 2))

    def multivariate_attention(self, tokens: Tensor, layer: int,
                               context: AttributionContext | None = None) -> Tensor:
        B, T, D = tokens.shape
        h = self.config.n_heads
        dk = D // h
        p = f"layers.{layer}.attn"

        def heads(w):
            return (tokens @ self.params[f"{p}.{w}"]).reshape(B, T, h, dk).transpose(0, 2, 1, 3)

        q, k, v = heads("wq"), heads("wk"), heads("wv")
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dk))
        attn = E.softmax(scores, axis=-1)
        if context is not None:
            context.attention.append(attn.data.copy())
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        return out @ self.params[f"{p}.wo"]

    def _layer_norm(self, name: str, x: Tensor) -> Tensor:
        return E.layer_norm(x, LN_EPS) * self.params[f"{name}.gain"] + self.params[f"{name}.bias"]

    def encoder_block(self, tokens: Tensor, layer: int, training: bool = False,
                      context: AttributionContext | None = None) -> Tensor:
        p = f"layers.{layer}"
        drop = self.config.dropout if training else 0.0
        a = E.dropout(self.multivariate_attention(tokens, layer, context), drop, self._dropout_rng)
        h1 = self._layer_norm(f"{p}.norm1", a + tokens)
        f = self._dense(f"{p}.ffn2", E.relu(self._dense(f"{p}.ffn1", h1)))
        f = E.dropout(f, drop, self._dropout_rng)
        out = self._layer_norm(f"{p}.norm2", f + h1)
        if context is not None:
            context.tokens.append(out.data.copy())
        return out

    def project_seasonal(self, tokens: Tensor) -> Tensor:
        """[B, N, D] -> [B, H, N]."""
        return self._dense("project", tokens).swapaxes(1, 2)

    def project_trend(self, trend) -> Tensor:
        """[B, L, N] -> [B, H, N] with a map shared by all variates."""
        return self._dense("trend", E.as_tensor(trend).swapaxes(1, 2)).swapaxes(1, 2)

    # -- forward -------------------------------------------------------------

    def _flip(self, x: Tensor) -> Tensor:
        L = x.shape[1]
        return E.matmul(np.eye(L)[::-1].copy(), x)

    def forward(self, x, training: bool = False,
                context: AttributionContext | None = None) -> Tensor:
        c = self.config
        x = E.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (c.lookback, c.n_variates):
            raise E.ShapeError(
                f"expected input [B, {c.lookback}, {c.n_variates}], got {x.shape}")
        if c.use_decomposition:
            parts = series_decompose(x, c.kernel_size)
            seasonal, trend = parts.seasonal, parts.trend
        else:
            seasonal, trend = x, None
        if c.time_flip:
            seasonal = self._flip(seasonal)
            trend = None if trend is None else self._flip(trend)

        normed, stats = instance_normalize(seasonal)
        if c.embedding_mode == "variate":
            tokens = self.embed_variates(normed)
            if trend is not None and c.embed_trend:
                tokens = tokens + self._embed(trend.swapaxes(1, 2), "embed_trend")
        else:
            tokens = self._embed(normed) + self.params["pos_embed"]
            if trend is not None and c.embed_trend:
                tokens = tokens + self._embed(trend, "embed_trend")

        for i in range(c.n_layers):
            tokens = self.encoder_block(tokens, i, training, context)

        if c.embedding_mode == "variate":
            y = self.project_seasonal(tokens)
        else:
            per_step = self._dense("project", tokens)  # [B, L, N]
            y = self._dense("project_time", per_step.swapaxes(1, 2)).swapaxes(1, 2)
        y = denormalize(y, stats)
        if trend is not None and not c.embed_trend:
            y = y + self.project_trend(trend)
        return y

    __call__ = forward

    def forecast(self, x) -> np.ndarray:
        """Evaluation-mode forecast of a [B, L, N] array, returned as [B, H, N]."""
        return self.forward(np.asarray(x, dtype=np.float64)).data

    def forward_with_context(self, x) -> tuple[np.ndarray, AttributionContext]:
        ctx = AttributionContext()
        y = self.forward(np.asarray(x, dtype=np.float64), context=ctx)
        return y.data, ctx
