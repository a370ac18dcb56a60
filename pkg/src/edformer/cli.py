"""``edformer`` command line: train, evaluate, forecast, decompose, explain, bench.

Settings come from a flat ``key = value`` file (``#`` starts a comment)
given by ``--config``; any key can be overridden by ``--key-name VALUE``.
Exit status is 0 on success, 1 on runtime failure, 2 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import explain as X
from .data import (DataError, load_csv, make_windows, split_chronological, stack_windows,
                   standardize)
from .decompose import ConfigError, decompose_array
from .metrics import mae, mse, summarize_horizons, write_report
from .model import EDformer, ModelConfig
from .train import (CheckpointError, TrainConfig, TrainingDivergedError, benchmark_speed,
                    evaluate, load_checkpoint, predict, save_checkpoint, train)

log = logging.getLogger("edformer")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _lengths(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "data_path": (str, ""),
    "dataset": (str, ""),
    "input": (str, ""),
    "checkpoint": (str, ""),
    "out_dir": (str, "out"),
    "invert": (_bool, False),
    # model
    "lookback": (int, 96),
    "horizon": (int, 96),
    "d_model": (int, 128),
    "n_heads": (int, 8),
    "n_layers": (int, 2),
    "d_ff": (int, 256),
    "kernel_size": (int, 25),
    "dropout": (float, 0.1),
    "use_decomposition": (_bool, True),
    "embedding_mode": (str, "variate"),
    "time_flip": (_bool, False),
    "embed_trend": (_bool, False),
    "embedding_depth": (int, 1),
    "seed": (int, 0),
    # training
    "batch_size": (int, 32),
    "learning_rate": (float, 1e-4),
    "max_epochs": (int, 10),
    "patience": (int, 3),
    "max_steps": (_opt_int, None),
    "shuffle": (_bool, True),
    # splits; sizes of 0 fall back to the ratios
    "train_ratio": (float, 0.7),
    "val_ratio": (float, 0.1),
    "test_ratio": (float, 0.2),
    "train_size": (int, 0),
    "val_size": (int, 0),
    "test_size": (int, 0),
    # explainability
    "method": (str, "ig"),
    "k_fraction": (float, 0.2),
    "n_windows": (int, 8),
    "ig_steps": (int, 64),
    "gs_samples": (int, 32),
    "gs_baselines": (int, 4),
    "noise_std": (float, 0.1),
    "win_size": (int, 8),
    "patch_length": (int, 4),
    # benchmark
    "bench_iters": (int, 10),
    "n_variates": (int, 7),
    "bench_lengths": (_lengths, (96, 192, 336, 720)),
}


class RunConfig(dict):
    """Validated settings; ``explicit`` records keys set by the user."""

    def __init__(self, values: dict, explicit: set[str]):
        super().__init__(values)
        self.explicit = explicit

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None

    def model_config(self, n_variates: int) -> ModelConfig:
        keys = {f.name for f in fields(ModelConfig)} - {"n_variates"}
        return ModelConfig(n_variates=n_variates, **{k: self[k] for k in keys})

    def train_config(self) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: self[k] for k in keys})


def _convert(key: str, raw: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        return SCHEMA[key][0](raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config_text(text: str, where: str = "config") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = _convert(key, raw, f"{where}:{lineno}")
    return out


def build_config(path: str | None, overrides: dict[str, str]) -> RunConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    explicit: set[str] = set()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        parsed = parse_config_text(p.read_text(encoding="utf-8"), str(p))
        values.update(parsed)
        explicit |= set(parsed)
    for key, raw in overrides.items():
        values[key] = _convert(key, raw, "command line")
        explicit.add(key)
    return RunConfig(values, explicit)


# -- shared plumbing ----------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "model.edf"


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _splits(cfg: RunConfig, n_steps: int, lookback: int, horizon: int):
    sizes = None
    if cfg.train_size or cfg.val_size or cfg.test_size:
        sizes = (cfg.train_size, cfg.val_size, cfg.test_size)
    return split_chronological(n_steps, lookback, horizon,
                               (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), sizes)


def _load_trained(cfg: RunConfig):
    ckpt = load_checkpoint(_require_file(str(_checkpoint_path(cfg)), "checkpoint"))
    mc = ckpt.model.config
    for key in ("lookback", "horizon"):
        if key in cfg.explicit and cfg[key] != getattr(mc, key):
            raise ConfigError(
                f"config {key}={cfg[key]} does not match checkpoint {key}={getattr(mc, key)}")
    return ckpt


def _dataset_for(cfg: RunConfig, ckpt):
    ds = load_csv(_require_file(cfg.data_path, "dataset"))
    mc = ckpt.model.config
    if ds.n_variates != mc.n_variates:
        raise ConfigError(
            f"dataset has {ds.n_variates} variates, checkpoint expects {mc.n_variates}")
    splits = _splits(cfg, len(ds), mc.lookback, mc.horizon)
    if ckpt.data_mean is not None:
        values = (ds.values - ckpt.data_mean) / ckpt.data_std
    else:
        values = standardize(ds.values, splits[0])[0]
    return ds, values, splits


# -- commands ----------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    ds = load_csv(_require_file(cfg.data_path, "dataset"))
    tr, va, _ = _splits(cfg, len(ds), cfg.lookback, cfg.horizon)
    values, mean_, std_ = standardize(ds.values, tr)
    train_w = make_windows(values, tr, cfg.lookback, cfg.horizon)
    val_w = make_windows(values, va, cfg.lookback, cfg.horizon)
    model = EDformer(cfg.model_config(ds.n_variates))
    model, history = train(model, train_w, val_w, cfg.train_config())
    out = _out_dir(cfg)
    ckpt = _checkpoint_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt, mean_, std_)
    _write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss"], history)
    print(f"trained {len(history)} epochs; checkpoint {ckpt}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    ckpt = _load_trained(cfg)
    model, mc = ckpt.model, ckpt.model.config
    ds, values, (_, _, te) = _dataset_for(cfg, ckpt)
    Xte, Yte = stack_windows(make_windows(values, te, mc.lookback, mc.horizon))
    if cfg.invert and ckpt.data_mean is not None:
        pred = predict(model, Xte) * ckpt.data_std + ckpt.data_mean
        truth = Yte * ckpt.data_std + ckpt.data_mean
        m, a = mse(pred, truth), mae(pred, truth)
    else:
        m, a = evaluate(model, (Xte, Yte))
    summary = summarize_horizons([(mc.horizon, m, a)])
    name = cfg.dataset or Path(cfg.data_path).stem
    write_report(_out_dir(cfg) / "metrics.csv", summary, name)
    print(f"{name} horizon {mc.horizon}: mse {m:.6f} mae {a:.6f}")
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    ckpt = _load_trained(cfg)
    mc = ckpt.model.config
    ds = load_csv(_require_file(cfg.input, "input file"))
    if ds.n_variates != mc.n_variates:
        raise ConfigError(f"input has {ds.n_variates} variates, checkpoint expects {mc.n_variates}")
    if len(ds) < mc.lookback:
        raise DataError(f"input has {len(ds)} rows, need at least lookback={mc.lookback}")
    mean_ = ckpt.data_mean if ckpt.data_mean is not None else 0.0
    std_ = ckpt.data_std if ckpt.data_std is not None else 1.0
    window = (ds.values[-mc.lookback:] - mean_) / std_
    y = ckpt.model.forecast(window[None])[0]
    if cfg.invert:
        y = y * std_ + mean_
    _write_csv(_out_dir(cfg) / "forecast.csv", ["step", *ds.variate_names],
               ([h + 1, *row] for h, row in enumerate(y)))
    print(f"wrote {mc.horizon} forecast rows")
    return 0


def cmd_decompose(cfg: RunConfig) -> int:
    ds = load_csv(_require_file(cfg.input or cfg.data_path, "input file"))
    trend, seasonal = decompose_array(ds.values, cfg.kernel_size)
    stamps = ds.timestamps or [str(i) for i in range(len(ds))]
    rows = ((stamps[t], name, ds.values[t, n], trend[t, n], seasonal[t, n])
            for n, name in enumerate(ds.variate_names) for t in range(len(ds)))
    _write_csv(_out_dir(cfg) / "components.csv",
               ["time", "variate", "original", "trend", "seasonal"], rows)
    return 0


def _method_options(cfg: RunConfig, method: str, train_inputs: np.ndarray) -> dict:
    if method == "ig":
        return {"steps": cfg.ig_steps}
    if method == "gs":
        rng = np.random.default_rng(cfg.seed)
        pick = rng.choice(len(train_inputs), min(cfg.gs_baselines, len(train_inputs)),
                          replace=False)
        bases = np.concatenate([np.zeros((1, *train_inputs.shape[1:])), train_inputs[np.sort(pick)]])
        return {"baselines": bases, "samples": cfg.gs_samples,
                "noise_std": cfg.noise_std, "seed": cfg.seed}
    if method == "winit":
        return {"win_size": cfg.win_size}
    if method == "fo":
        return {"patch_length": cfg.patch_length}
    return {}


def cmd_explain(cfg: RunConfig) -> int:
    method = cfg.method.lower()
    if method not in ("fa", "fo", "ig", "gs", "winit"):
        raise ConfigError(f"unknown method {cfg.method!r}; choose fa, fo, ig, gs or winit")
    ckpt = _load_trained(cfg)
    model, mc = ckpt.model, ckpt.model.config
    ds, values, (tr, _, te) = _dataset_for(cfg, ckpt)
    Xtr, _ = stack_windows(make_windows(values, tr, mc.lookback, mc.horizon))
    Xte, Yte = stack_windows(make_windows(values, te, mc.lookback, mc.horizon))
    Xte, Yte = Xte[:cfg.n_windows], Yte[:cfg.n_windows]
    opts = _method_options(cfg, method, Xtr)
    maps = [X.attribute(model, x, method, **opts) for x in Xte]

    out = _out_dir(cfg)
    names = ds.variate_names
    _write_csv(out / "attributions.csv", ["window", "t", "variate", "score"],
               ((w, t, names[n], m.scores[t, n]) for w, m in enumerate(maps)
                for t in range(mc.lookback) for n in range(mc.n_variates)))
    importance = np.mean([m.variate_importance() for m in maps], axis=0)
    _write_csv(out / "variate_importance.csv", ["variate", "importance"], zip(names, importance))
    saliency = np.mean([np.abs(m.scores) for m in maps], axis=0)
    _write_csv(out / "saliency.csv", ["t", "variate", "score"],
               ((t, names[n], saliency[t, n]) for t in range(mc.lookback)
                for n in range(mc.n_variates)))
    rep = X.faithfulness(model, Xte, Yte, method, cfg.k_fraction, attributions=maps)
    _write_csv(out / "faithfulness.csv",
               ["method", "k_fraction", "comprehensiveness_mse", "comprehensiveness_mae",
                "sufficiency_mse", "sufficiency_mae"],
               [(rep.method, rep.k_fraction, rep.comprehensiveness_mse,
                 rep.comprehensiveness_mae, rep.sufficiency_mse, rep.sufficiency_mae)])
    print(f"{method}: comprehensiveness mse {rep.comprehensiveness_mse:.6f}, "
          f"sufficiency mse {rep.sufficiency_mse:.6f}")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    if cfg.checkpoint or _checkpoint_path(cfg).is_file():
        base = _load_trained(cfg).model.config.to_dict()
    else:
        base = cfg.model_config(cfg.n_variates).to_dict()
    rows = []
    rng = np.random.default_rng(cfg.seed)
    for length in cfg.bench_lengths:
        mc = ModelConfig.from_dict({**base, "lookback": length})
        X_ = rng.normal(size=(cfg.batch_size, length, mc.n_variates))
        Y_ = rng.normal(size=(cfg.batch_size, mc.horizon, mc.n_variates))
        s_iter, total = benchmark_speed(EDformer(mc), (X_, Y_), cfg.bench_iters, cfg.batch_size)
        rows.append((length, s_iter, total))
        print(f"lookback {length:4d}: {s_iter:.4f} s/iter, cost {total:.3f} s")
    _write_csv(_out_dir(cfg) / "bench.csv", ["lookback", "s_per_iter", "total_seconds"], rows)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "decompose": cmd_decompose,
    "explain": cmd_explain,
    "bench": cmd_bench,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in SCHEMA:
        if key == "out_dir":
            continue
        flag = "--" + key.replace("_", "-")
        if SCHEMA[key][0] is _bool:
            common.add_argument(flag, dest=key, nargs="?", const="true", default=None)
        else:
            common.add_argument(flag, dest=key, default=None)
    parser = argparse.ArgumentParser(prog="edformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__name__.replace("cmd_", ""))
    return parser


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k in SCHEMA and v is not None}
    try:
        threads = int(os.environ.get("EDFORMER_THREADS", "1"))
        cfg = build_config(args.config, overrides)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"edformer {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, TrainingDivergedError, ValueError) as exc:
        print(f"edformer {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
