"""Post-hoc attribution of a forecaster's output to its input cells.

Any object with ``forward(x) -> Tensor`` mapping [B, L, N] windows to
[B, H, N] forecasts, and treating batch rows independently, can be
explained. Removal scores of inputs the model ignores are exactly zero
only if a row's output is also bitwise independent of the rest of the
batch (a single 2-D gemm over the batch can break this in the last bit). Removal-style methods (FA, FO, WinIT) only need forward
evaluations; IG and GradientSHAP differentiate through the tape.

Scores are per (time, variate) cell of one input window. Faithfulness is
measured by masking the top-ranked cells (comprehensiveness) or
everything except them (sufficiency) and reporting the change in forecast
error against ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Protocol, Sequence

import numpy as np

from . import engine as E

_CHUNK = 512


class Forecaster(Protocol):
    def forward(self, x) -> E.Tensor: ...


@dataclass(frozen=True)
class TargetFunctional:
    """Scalar summary of each [H, N] forecast that attributions explain."""

    kind: Literal["mean", "cell", "variate"] = "mean"
    step: int = 0
    variate: int = 0

    def __call__(self, y: E.Tensor) -> E.Tensor:
        if self.kind == "mean":
            return E.mean(y, axis=(1, 2))
        H, N = y.shape[1:]
        if self.kind == "cell":
            w = np.zeros((H, N))
            w[self.step, self.variate] = 1.0
        elif self.kind == "variate":
            w = np.zeros((H, N))
            w[:, self.variate] = 1.0 / H
        else:
            raise ValueError(f"unknown target kind {self.kind!r}")
        return E.sum_(y * w, axis=(1, 2))


MEAN_TARGET = TargetFunctional()


@dataclass
class AttributionMap:
    scores: np.ndarray  # [L, N]
    method: str
    target: TargetFunctional = MEAN_TARGET

    def variate_importance(self) -> np.ndarray:
        return np.abs(self.scores).sum(axis=0)


@dataclass
class FaithfulnessReport:
    method: str
    k_fraction: float
    comprehensiveness_mse: float
    comprehensiveness_mae: float
    sufficiency_mse: float
    sufficiency_mae: float


def _target_values(model: Forecaster, batch: np.ndarray, target: TargetFunctional) -> np.ndarray:
    out = [target(model.forward(batch[i:i + _CHUNK])).data
           for i in range(0, len(batch), _CHUNK)]
    return np.concatenate(out)


def _target_gradients(model: Forecaster, points: np.ndarray,
                      target: TargetFunctional) -> np.ndarray:
    grads = []
    for i in range(0, len(points), _CHUNK):
        x = E.Tensor(points[i:i + _CHUNK], requires_grad=True)
        with E.Tape() as tape:
            total = E.sum_(target(model.forward(x)))
        if total._node is None:
            # output does not depend on the input at all
            grads.append(np.zeros(x.shape))
            continue
        tape.backward(total)
        grads.append(x.grad if x.grad is not None else np.zeros(x.shape))
    return np.concatenate(grads)


def _window(window) -> np.ndarray:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a single [L, N] window, got shape {w.shape}")
    return w


def feature_ablation(model: Forecaster, window, baseline: float = 0.0,
                     target: TargetFunctional = MEAN_TARGET) -> AttributionMap:
    """Replace one whole variate at a time; its score fills every time step."""
    x = _window(window)
    L, N = x.shape
    batch = np.repeat(x[None], N + 1, axis=0)
    for n in range(N):
        batch[n + 1, :, n] = baseline
    f = _target_values(model, batch, target)
    per_variate = np.abs(f[0] - f[1:])
    return AttributionMap(np.broadcast_to(per_variate, (L, N)).copy(), "fa", target)


def feature_occlusion(model: Forecaster, window, patch_length: int = 4,
                      baseline: float = 0.0,
                      target: TargetFunctional = MEAN_TARGET) -> AttributionMap:
    """Zero out non-overlapping time patches of each variate in turn."""
    x = _window(window)
    L, N = x.shape
    if not 1 <= patch_length <= L:
        raise ValueError(f"patch_length must lie in [1, {L}]")
    patches = [(n, s) for n in range(N) for s in range(0, L, patch_length)]
    batch = np.repeat(x[None], len(patches) + 1, axis=0)
    for i, (n, s) in enumerate(patches, start=1):
        batch[i, s:s + patch_length, n] = baseline
    f = _target_values(model, batch, target)
    scores = np.zeros((L, N))
    for i, (n, s) in enumerate(patches, start=1):
        scores[s:s + patch_length, n] = abs(f[0] - f[i])
    return AttributionMap(scores, "fo", target)


def integrated_gradients(model: Forecaster, window, baseline=None, steps: int = 64,
                         target: TargetFunctional = MEAN_TARGET) -> AttributionMap:
    """Midpoint-rule path integral of gradients from ``baseline`` to the input."""
    x = _window(window)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x0 = np.zeros_like(x) if baseline is None else np.broadcast_to(baseline, x.shape)
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    points = x0[None] + alphas[:, None, None] * (x - x0)[None]
    grads = _target_gradients(model, points, target)
    return AttributionMap((x - x0) * grads.mean(axis=0), "ig", target)


def gradient_shap(model: Forecaster, window, baselines=None, samples: int = 32,
                  noise_std: float = 0.1, seed: int = 0,
                  target: TargetFunctional = MEAN_TARGET) -> AttributionMap:
    """Expected gradient times input-minus-baseline at noisy random path points."""
    x = _window(window)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    bases = np.zeros((1, *x.shape)) if baselines is None else np.asarray(baselines, dtype=np.float64)
    if bases.ndim == 2:
        bases = bases[None]
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(bases), samples)
    alpha = rng.uniform(0.0, 1.0, samples)
    noise = rng.normal(0.0, 1.0, (samples, *x.shape)) * noise_std
    chosen = bases[pick]
    points = chosen + alpha[:, None, None] * (x[None] - chosen) + noise
    grads = _target_gradients(model, points, target)
    return AttributionMap((grads * (x[None] - chosen)).mean(axis=0), "gs", target)


def winit(model: Forecaster, window, win_size: int = 8, baseline: float = 0.0,
          target: TargetFunctional = MEAN_TARGET) -> AttributionMap:
    """Windowed removal importance.

    Cell (t, n) accumulates the output change from removing the runs
    ``t..t+d`` of variate ``n`` for every ``d < win_size``, each weighted by
    ``1 / (d + 1)``.
    """
    x = _window(window)
    L, N = x.shape
    if win_size < 1:
        raise ValueError("win_size must be >= 1")
    win_size = min(win_size, L)
    spans = [(t, n, d) for t in range(L) for n in range(N)
             for d in range(win_size) if t + d < L]
    batch = np.repeat(x[None], len(spans) + 1, axis=0)
    for i, (t, n, d) in enumerate(spans, start=1):
        batch[i, t:t + d + 1, n] = baseline
    f = _target_values(model, batch, target)
    scores = np.zeros((L, N))
    for i, (t, n, d) in enumerate(spans, start=1):
        scores[t, n] += abs(f[0] - f[i]) / (d + 1)
    return AttributionMap(scores, "winit", target)


def random_attribution(model: Forecaster, window, seed: int = 0, **_) -> AttributionMap:
    """Uniform random scores; a reference ranking for faithfulness checks."""
    x = _window(window)
    return AttributionMap(np.random.default_rng(seed).uniform(size=x.shape), "random")


METHODS: dict[str, Callable[..., AttributionMap]] = {
    "fa": feature_ablation,
    "fo": feature_occlusion,
    "ig": integrated_gradients,
    "gs": gradient_shap,
    "winit": winit,
    "random": random_attribution,
}


def attribute(model: Forecaster, window, method: str, **options) -> AttributionMap:
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown attribution method {method!r}; "
                         f"choose from {sorted(METHODS)}") from None
    return fn(model, window, **options)


# -- faithfulness ------------------------------------------------------------

def top_k_mask(scores: np.ndarray, k_fraction: float) -> np.ndarray:
    """Boolean mask of the ``round(k_fraction * cells)`` largest |scores|.

    Ties break by row-major cell order so the ranking is deterministic.
    """
    flat = np.abs(np.asarray(scores, dtype=np.float64)).ravel()
    k = int(round(k_fraction * flat.size))
    mask = np.zeros(flat.size, dtype=bool)
    mask[np.argsort(-flat, kind="stable")[:k]] = True
    return mask.reshape(np.shape(scores))


def _errors(model: Forecaster, X: np.ndarray, Y: np.ndarray) -> tuple[float, float]:
    pred = np.concatenate([model.forward(X[i:i + _CHUNK]).data for i in range(0, len(X), _CHUNK)])
    diff = pred - Y
    return float(np.mean(diff ** 2)), float(np.mean(np.abs(diff)))


def _maps(model, X, method, attributions, options) -> list[np.ndarray]:
    if attributions is not None:
        if len(attributions) != len(X):
            raise ValueError("need one attribution map per window")
        return [a.scores if isinstance(a, AttributionMap) else np.asarray(a) for a in attributions]
    return [attribute(model, x, method, **options).scores for x in X]


def _masked_delta(model, X, Y, maps, k_fraction, keep_top, baseline) -> tuple[float, float]:
    if not 0.0 <= k_fraction <= 1.0:
        raise ValueError("k_fraction must lie in [0, 1]")
    masked = X.copy()
    for i, scores in enumerate(maps):
        top = top_k_mask(scores, k_fraction)
        masked[i][~top if keep_top else top] = baseline
    base_mse, base_mae = _errors(model, X, Y)
    m_mse, m_mae = _errors(model, masked, Y)
    return m_mse - base_mse, m_mae - base_mae


def comprehensiveness(model: Forecaster, X, Y, method: str = "fa", k_fraction: float = 0.2,
                      attributions=None, baseline: float = 0.0,
                      **options) -> tuple[float, float]:
    """Error increase (MSE, MAE) after masking the top-ranked cells of each window."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    maps = _maps(model, X, method, attributions, options)
    return _masked_delta(model, X, Y, maps, k_fraction, False, baseline)


def sufficiency(model: Forecaster, X, Y, method: str = "fa", k_fraction: float = 0.2,
                attributions=None, baseline: float = 0.0,
                **options) -> tuple[float, float]:
    """Error change (MSE, MAE) when only the top-ranked cells are kept."""
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    maps = _maps(model, X, method, attributions, options)
    return _masked_delta(model, X, Y, maps, k_fraction, True, baseline)


def faithfulness(model: Forecaster, X, Y, method: str = "fa", k_fraction: float = 0.2,
                 attributions=None, baseline: float = 0.0, **options) -> FaithfulnessReport:
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    maps = _maps(model, X, method, attributions, options)
    c = _masked_delta(model, X, Y, maps, k_fraction, False, baseline)
    s = _masked_delta(model, X, Y, maps, k_fraction, True, baseline)
    return FaithfulnessReport(method, k_fraction, c[0], c[1], s[0], s[1])
