"""Command-line surface.

stdout carries only machine-readable payloads (JSON lines or CSV); all
diagnostics go to stderr. Exit codes: 0 ok, 1 usage/config, 2 data,
3 numeric failure. ETSFORE_SEED overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import classical, data, esa, model, trainer
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    EtsforeError,
    EvaluationError,
    TrainingError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(obj) -> None:
    print(json.dumps(obj))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# run configuration

_CONFIG_SECTIONS = {
    "model": set(model.ModelConfig.__dataclass_fields__),
    "train": set(trainer.TrainConfig.__dataclass_fields__),
    "split": {"train", "val", "test"},
}


def load_run_config(path: str) -> dict:
    """Strict JSON config: unknown keys are rejected, required keys named."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    unknown = sorted(set(raw) - set(_CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown config sections: {unknown}")
    for section, known in _CONFIG_SECTIONS.items():
        entries = raw.get(section, {})
        if not isinstance(entries, dict):
            raise ConfigError(f"{path}: section '{section}' must be a JSON object")
        bad = sorted(set(entries) - known)
        if bad:
            raise ConfigError(f"{path}: unknown keys in '{section}': {bad}")
    for key in ("lookback", "horizon"):
        if key not in raw.get("model", {}):
            raise ConfigError(f"{path}: missing required config key model.{key}")
    return raw


def _build_configs(raw: dict, channels: int):
    model_kwargs = dict(raw.get("model", {}))
    model_kwargs.setdefault("channels", channels)
    try:
        mcfg = model.ModelConfig(**model_kwargs)
        tcfg = trainer.TrainConfig(**raw.get("train", {}))
        split = data.SplitSpec(**raw.get("split", {})) if "split" in raw else data.SplitSpec()
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from None
    env_seed = os.environ.get("ETSFORE_SEED")
    if env_seed is not None:
        tcfg.seed = int(env_seed)
    return mcfg, tcfg, split


# ---------------------------------------------------------------------------
# dataset preparation shared by train/evaluate/forecast/decompose


def _prepare_splits(path: str, mcfg: model.ModelConfig, split: data.SplitSpec):
    """Returns raw (train_pairs, val_pairs, test_pairs, train_stats)."""
    L, H = mcfg.lookback, mcfg.horizon
    if data.is_synth_csv(path):
        ds = data.read_synth_csv(path)
        if (ds.lookback, ds.horizon) != (L, H):
            raise ConfigError(
                f"dataset windows are {ds.lookback}/{ds.horizon}, config wants {L}/{H}"
            )
        pairs = ds.window_pairs()
        n = len(pairs)
        n_train = int(split.train * n)
        n_val = int(split.val * n)
        groups = (pairs[:n_train], pairs[n_train : n_train + n_val], pairs[n_train + n_val :])
        if min(len(g) for g in groups) < 1:
            raise DataError(f"{n} instances cannot be split {split}")
        stats = data.compute_stats(np.stack([p.lookback for p in groups[0]]))
    else:
        series = data.load_csv(path)
        parts = data.split_chronological(series, split, min_len=L + H)
        stats = data.compute_stats(parts[0].values)
        groups = tuple(data.window_dataset(part, L, H) for part in parts)
    return (*groups, stats)


def _normalize_pairs(pairs, stats: data.NormStats):
    return [
        data.WindowPair(
            lookback=data.normalize(p.lookback, stats),
            target=data.normalize(p.target, stats),
            origin=p.origin,
        )
        for p in pairs
    ]


def _infer_channels(path: str) -> int:
    if data.is_synth_csv(path):
        return 1
    return data.load_csv(path).channels


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    ds = data.synth_generate(
        args.n, args.noise, args.seed, lookback=args.lookback, horizon=args.horizon
    )
    try:
        data.write_synth_csv(ds, args.out)
    except OSError as e:
        _log(f"cannot write {args.out}: {e}")
        return EXIT_DATA
    flat = ds.values[:, :, 0]
    _emit(
        {
            "instances": len(flat),
            "lookback": ds.lookback,
            "horizon": ds.horizon,
            "noise": ds.noise_std,
            "seed": ds.seed,
            "mean": float(flat.mean()),
            "std": float(flat.std()),
            "min": float(flat.min()),
            "max": float(flat.max()),
        }
    )
    return EXIT_OK


def cmd_train(args) -> int:
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
        raise ConfigError(f"checkpoint directory not writable: {out_dir}")
    raw = load_run_config(args.config)
    mcfg, tcfg, split = _build_configs(raw, _infer_channels(args.data))
    train_pairs, val_pairs, _, stats = _prepare_splits(args.data, mcfg, split)
    train_pairs = _normalize_pairs(train_pairs, stats)
    val_pairs = _normalize_pairs(val_pairs, stats)
    _log(
        f"training on {len(train_pairs)} windows, validating on {len(val_pairs)}, "
        f"seed {tcfg.seed}"
    )
    ckpt, _ = trainer.train(mcfg, tcfg, train_pairs, val_pairs, stats, log_fn=_emit)
    trainer.save_checkpoint(ckpt, args.out)
    _emit({"checkpoint": args.out, "best_epoch": ckpt.best_epoch, "best_val_mse": ckpt.best_val_mse})
    return EXIT_OK


def _checkpoint_stats(ckpt: trainer.Checkpoint, path: str) -> data.NormStats:
    # evaluation must reuse the training-time normalization, not the file's
    stats = ckpt.stats
    if stats is None:
        raise DataError(f"{path}: checkpoint has no normalization stats")
    return stats


def cmd_evaluate(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    groups = _prepare_splits(args.data, ckpt.config, data.SplitSpec())
    pairs = {"train": groups[0], "val": groups[1], "test": groups[2]}[args.split]
    if not pairs:
        raise DataError(f"split '{args.split}' has no windows")
    result = trainer.evaluate(ckpt, _normalize_pairs(pairs, _checkpoint_stats(ckpt, args.model)))
    _emit(result)
    return EXIT_OK


def _window_for(args, ckpt) -> data.WindowPair:
    groups = _prepare_splits(args.data, ckpt.config, data.SplitSpec())
    pairs = [p for g in groups[:3] for p in g]
    if not 0 <= args.at < len(pairs):
        raise DataError(f"window index {args.at} outside [0, {len(pairs) - 1}]")
    return _normalize_pairs([pairs[args.at]], _checkpoint_stats(ckpt, args.model))[0]


def _emit_table(columns: list[str], rows: np.ndarray, fmt: str) -> None:
    if fmt == "csv":
        print(",".join(columns))
        for row in rows:
            print(",".join(f"{v:.17g}" for v in row))
    else:
        _emit({"columns": columns, "rows": [[float(v) for v in row] for row in rows]})


def _channel_columns(base_names: list[str], m: int) -> list[str]:
    if m == 1:
        return base_names
    return [f"{name}_ch{c}" for name in base_names for c in range(m)]


def cmd_forecast(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    pair = _window_for(args, ckpt)
    dec = model.forecast(pair.lookback, ckpt.to_state())
    H, m = dec.total.shape
    t = np.arange(H)[:, None]
    cols = ["t"] + _channel_columns(["total", "target"], m)
    rows = np.hstack([t, dec.total.reshape(H, m), pair.target.reshape(H, m)])
    _emit_table(cols, rows, args.format)
    return EXIT_OK


def cmd_decompose(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    pair = _window_for(args, ckpt)
    dec, stack_growth, stack_seasonal, _ = model.decompose(pair.lookback, ckpt.to_state())
    H, m = dec.total.shape
    t = np.arange(H)[:, None]
    names = ["level", "growth", "seasonal", "total", "target"]
    blocks = [dec.level, dec.growth, dec.seasonal, dec.total, pair.target.reshape(H, m)]
    for n, (g, s) in enumerate(zip(stack_growth, stack_seasonal)):
        names += [f"growth{n}", f"seasonal{n}"]
        blocks += [g, s]
    cols = ["t"] + _channel_columns(names, m)
    rows = np.hstack([t] + [b.reshape(H, m) for b in blocks])
    _emit_table(cols, rows, args.format)
    return EXIT_OK


def cmd_baseline(args) -> int:
    series = data.load_csv(args.data)
    T = series.length
    n_test = max(1, int(round(args.test_fraction * T)))
    if T - n_test <= args.period:
        raise DataError(
            f"series length {T} too short for period {args.period} with {n_test} test steps"
        )
    per_channel = []
    for c in range(series.channels):
        x = series.values[:, c]
        fit = classical.hw_fit_grid(x[: T - n_test], args.period, args.grid)
        state = classical.hw_smooth(x[: T - n_test], fit.params)
        pred = classical.hw_forecast(state, fit.params, n_test)
        mse, mae = data.metrics(pred, x[T - n_test :])
        per_channel.append(
            {
                "channel": c,
                "mse": mse,
                "mae": mae,
                "alpha": fit.params.alpha,
                "beta": fit.params.beta,
                "gamma": fit.params.gamma,
                "phi": fit.params.phi,
                "degenerate": fit.degenerate,
            }
        )
    _emit(
        {
            "mse": float(np.mean([r["mse"] for r in per_channel])),
            "mae": float(np.mean([r["mae"] for r in per_channel])),
            "period": args.period,
            "test_steps": n_test,
            "channels": per_channel,
        }
    )
    return EXIT_OK


def bench_esa(lengths: list[int], d: int, repeats: int, seed: int = 0) -> list[dict]:
    if sorted(lengths) != lengths:
        raise ConfigError(f"lengths must be ascending, got {lengths}")
    rng = np.random.default_rng(seed)
    results = []
    for L in lengths:
        V = rng.normal(size=(L, d))
        params = esa.EsaParams.from_alpha(0.3, np.zeros(d))
        esa.esa_naive(V, params)  # warm caches before timing
        esa.esa_fast(V, params)
        naive_ms, fast_ms = 0.0, 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            esa.esa_naive(V, params)
            t1 = time.perf_counter()
            esa.esa_fast(V, params)
            t2 = time.perf_counter()
            naive_ms += (t1 - t0) * 1e3
            fast_ms += (t2 - t1) * 1e3
        results.append(
            {"L": L, "naive_ms": naive_ms / repeats, "fast_ms": fast_ms / repeats}
        )
    return results


def cmd_bench_esa(args) -> int:
    lengths = [int(s) for s in args.lengths.split(",")]
    for row in bench_esa(lengths, args.d, args.repeats):
        _emit(row)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etsfore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lookback", type=int, default=data.SYNTH_LOOKBACK)
    p.add_argument("--horizon", type=int, default=data.SYNTH_HORIZON)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("forecast", help="emit the total forecast for one window")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--at", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("decompose", help="emit per-component forecasts for one window")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--at", type=int, default=0)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("baseline", help="Holt-Winters grid-fit baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--period", type=int, required=True)
    p.add_argument("--grid", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("bench-esa", help="wall-time comparison of the two kernels")
    p.add_argument("--lengths", default="1024,4096")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=cmd_bench_esa)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as e:
        return int(e.code or 0)
    except (ConfigError, DimensionError, DomainError) as e:
        _log(f"error: {e}")
        return EXIT_USAGE
    except DataError as e:
        _log(f"error: {e}")
        return EXIT_DATA
    except (TrainingError, EvaluationError, FloatingPointError) as e:
        _log(f"error: {e}")
        return EXIT_NUMERIC
    except OSError as e:
        _log(f"error: {e}")
        return EXIT_DATA
    except EtsforeError as e:
        _log(f"error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
