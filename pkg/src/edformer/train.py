"""Mini-batch Adam training, evaluation, checkpoints and the speed benchmark."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import engine as E
from .data import WindowPair, stack_windows
from .metrics import mae, mse
from .model import EDformer, ModelConfig

log = logging.getLogger(__name__)

MAGIC = b"EDF1"
FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    shuffle: bool = True
    max_steps: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


def _as_arrays(windows) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(windows, tuple):
        X, Y = windows
        return np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    return stack_windows(windows)


def mse_loss(pred: E.Tensor, target) -> E.Tensor:
    diff = pred - target
    return E.mean(diff * diff)


def predict(model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([model.forward(X[i:i + batch_size]).data
                           for i in range(0, len(X), batch_size)])


def evaluate(model, windows, batch_size: int = 256) -> tuple[float, float]:
    """(MSE, MAE) over every window, horizon step and variate."""
    X, Y = _as_arrays(windows)
    if len(X) == 0:
        raise ValueError("evaluate needs at least one window")
    pred = predict(model, X, batch_size)
    return mse(pred, Y), mae(pred, Y)


def train(model: EDformer, train_windows: Sequence[WindowPair] | tuple,
          val_windows: Sequence[WindowPair] | tuple | None,
          cfg: TrainConfig) -> tuple[EDformer, list[tuple[int, float, float]]]:
    """Fit ``model`` in place; returns it with the (epoch, train, val) loss history.

    With validation windows, training stops after ``cfg.patience`` epochs
    without improvement and the best-validation parameters are restored.
    """
    X, Y = _as_arrays(train_windows)
    if len(X) == 0:
        raise ValueError("no training windows")
    val = _as_arrays(val_windows) if val_windows is not None and len(val_windows) else None

    params = model.parameters()
    opt = E.Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple[int, float, float]] = []
    best_val, best_state, stale = np.inf, None, 0
    step = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(X)) if cfg.shuffle else np.arange(len(X))
        total, seen = 0.0, 0
        for batch_id, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                with E.Tape() as tape:
                    loss = mse_loss(model.forward(X[idx], training=True), Y[idx])
                tape.backward(loss)
            except E.NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite value at step {step}, epoch {epoch}, batch {batch_id}") from exc
            opt.step()
            step += 1
            total += float(loss.data) * len(idx)
            seen += len(idx)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        train_loss = total / seen
        val_loss = evaluate(model, val)[0] if val is not None else float("nan")
        history.append((epoch, train_loss, val_loss))
        log.info("epoch %d  train %.6f  val %.6f", epoch, train_loss, val_loss)

        if val is not None:
            if val_loss < best_val:
                best_val, best_state, stale = val_loss, model.state_dict(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.steps_trained = getattr(model, "steps_trained", 0) + step
    return model, history


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    model: EDformer
    data_mean: np.ndarray | None
    data_std: np.ndarray | None
    step: int


def _encode(model: EDformer, data_mean=None, data_std=None, step: int = 0) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        raw = name.encode()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", t.ndim),
                  struct.pack(f"<{t.ndim}I", *t.shape), t.data.astype("<f8").tobytes()]
    if data_mean is None:
        parts.append(struct.pack("<I", 0))
    else:
        mean_ = np.asarray(data_mean, dtype="<f8")
        std_ = np.asarray(data_std, dtype="<f8")
        parts += [struct.pack("<I", mean_.size), mean_.tobytes(), std_.tobytes()]
    parts.append(struct.pack("<Q", step))
    return b"".join(parts)


def save_checkpoint(model: EDformer, path, data_mean=None, data_std=None,
                    step: int | None = None) -> None:
    if step is None:
        step = getattr(model, "steps_trained", 0)
    Path(path).write_bytes(_encode(model, data_mean, data_std, step))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not an EDformer checkpoint")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    (n,) = r.unpack("<I")
    config = ModelConfig.from_dict(json.loads(r.take(n).decode()))
    model = EDformer(config)
    state = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape))
        state[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    model.load_state_dict(state)
    (n,) = r.unpack("<I")
    mean_ = std_ = None
    if n:
        mean_ = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64)
        std_ = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64)
    (step,) = r.unpack("<Q")
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    model.steps_trained = step
    return Checkpoint(model, mean_, std_, step)


# -- speed -------------------------------------------------------------------

def benchmark_speed(model: EDformer, windows, iters: int = 10,
                    batch_size: int = 32) -> tuple[float, float]:
    """Wall-clock seconds per forward+backward iteration, and the total."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    X, Y = _as_arrays(windows)
    xb, yb = X[:batch_size], Y[:batch_size]
    start = time.perf_counter()
    for _ in range(iters):
        with E.Tape() as tape:
            loss = mse_loss(model.forward(xb, training=True), yb)
        tape.backward(loss)
    total = time.perf_counter() - start
    return total / iters, total
