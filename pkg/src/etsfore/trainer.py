"""Optimization loop: Adam with two parameter groups (smoothing/damping rates
train at a fixed 100x rate, everything else follows linear warmup + cosine
annealing), plus evaluation and binary checkpointing.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import NormStats, WindowPair, augment_pair, metrics
from .errors import ConfigError, DataError, TrainingError
from .model import ModelConfig, ModelState, config_from_dict, config_to_dict, forward, mse_loss, is_special_parameter


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    epochs: int = 15
    warmup_epochs: int = 3
    min_lr: float = 1e-30
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    special_lr_mult: float = 100.0
    clip_norm: float | None = None
    augment: bool = False
    scale_aug_one_plus: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"bad schedule: epochs={self.epochs}, batch_size={self.batch_size}")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup epochs {self.warmup_epochs} must be < total epochs {self.epochs}"
            )
        if self.base_lr <= 0 or self.min_lr <= 0:
            raise ConfigError("learning rates must be positive")


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> tuple[float, float]:
    """(main lr, special lr) at a 0-indexed optimizer step.

    Main: linear ramp to base_lr over the warmup span, then cosine decay
    reaching min_lr exactly at the final step. Special: constant multiple
    of base_lr, never scheduled.
    """
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = max(1, (total_steps * cfg.warmup_epochs) // cfg.epochs) if cfg.epochs else 0
    if step < warmup_steps:
        lr = cfg.base_lr * (step + 1) / warmup_steps
    else:
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps + 1) / span)
        lr = cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))
    return lr, cfg.base_lr * cfg.special_lr_mult


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], beta1: float, beta2: float, eps: float):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.v = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.t = 0

    def step(self, params: dict[str, "ad.Tensor"], lr_of) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr_of(name) * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoint format

CKPT_MAGIC = b"ETSF"
CKPT_VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4"}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]  # float32 payloads
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    rng_state: dict | None = None
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    best_epoch: int = -1
    best_val_mse: float = math.nan

    def to_state(self) -> ModelState:
        tensors = {
            name: ad.Tensor(arr.astype(np.float64), requires_grad=True)
            for name, arr in self.params.items()
        }
        return ModelState(self.config, tensors)

    @property
    def stats(self) -> NormStats | None:
        if self.norm_mean is None:
            return None
        return NormStats(mean=self.norm_mean, std=self.norm_std)


def _write_record(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    code = _DTYPE_CODES[arr.dtype]
    buf.write(struct.pack("<BB", code, arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(np.ascontiguousarray(arr).tobytes())


def _read_record(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", buf.read(4))
    name = buf.read(name_len).decode("utf-8")
    code, rank = struct.unpack("<BB", buf.read(2))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(rank))
    dtype = np.dtype(_DTYPES[code])
    payload = buf.read(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
    return name, np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    header = {
        "model": config_to_dict(ckpt.config),
        "adam_step": ckpt.adam_step,
        "rng_state": ckpt.rng_state,
        "norm_mean": None if ckpt.norm_mean is None else list(map(float, ckpt.norm_mean)),
        "norm_std": None if ckpt.norm_std is None else list(map(float, ckpt.norm_std)),
        "best_epoch": ckpt.best_epoch,
        "best_val_mse": None if math.isnan(ckpt.best_val_mse) else ckpt.best_val_mse,
    }
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(struct.pack("<I", len(raw_header)))
    buf.write(raw_header)
    records = [(name, arr.astype("<f4")) for name, arr in ckpt.params.items()]
    records += [(f"adam.{name}", arr.astype("<f4")) for name, arr in ckpt.moments.items()]
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    (n_records,) = struct.unpack("<I", buf.read(4))
    params: dict[str, np.ndarray] = {}
    moments: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        name, arr = _read_record(buf)
        if name.startswith("adam."):
            moments[name[len("adam.") :]] = arr
        else:
            params[name] = arr
    val = header.get("best_val_mse")
    return Checkpoint(
        config=config_from_dict(header["model"]),
        params=params,
        moments=moments,
        adam_step=header.get("adam_step", 0),
        rng_state=header.get("rng_state"),
        norm_mean=None if header["norm_mean"] is None else np.asarray(header["norm_mean"]),
        norm_std=None if header["norm_std"] is None else np.asarray(header["norm_std"]),
        best_epoch=header.get("best_epoch", -1),
        best_val_mse=math.nan if val is None else float(val),
    )


# ---------------------------------------------------------------------------
# training and evaluation


def _stack(pairs: list[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([p.lookback for p in pairs]),
        np.stack([p.target for p in pairs]),
    )


def evaluate_state(
    state: ModelState, X: np.ndarray, Y: np.ndarray, stats: NormStats | None = None,
    chunk: int = 256,
) -> dict[str, float]:
    """Inference-mode metrics over all windows; raw-scale values when stats given."""
    if len(X) == 0:
        raise DataError("cannot evaluate an empty split")
    preds = []
    with ad.no_grad():
        for i in range(0, len(X), chunk):
            preds.append(forward(X[i : i + chunk], state, training=False).total.data)
    pred = np.concatenate(preds, axis=0)
    mse, mae = metrics(pred, Y)
    out = {"mse": mse, "mae": mae}
    if stats is not None:
        diff = (pred - Y) * stats.std
        out["mse_raw"] = float(np.mean(diff * diff))
        out["mae_raw"] = float(np.mean(np.abs(diff)))
    return out


def evaluate(ckpt: Checkpoint, pairs: list[WindowPair]) -> dict[str, float]:
    """Metrics of a stored model on a list of (already normalized) windows."""
    X, Y = _stack(pairs)
    return evaluate_state(ckpt.to_state(), X, Y, ckpt.stats)


def _snapshot_f32(arrs: dict[str, "ad.Tensor"]) -> dict[str, np.ndarray]:
    return {name: t.data.astype(np.float32) for name, t in arrs.items()}


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_pairs: list[WindowPair],
    val_pairs: list[WindowPair],
    stats: NormStats | None = None,
    log_fn=None,
) -> tuple[Checkpoint, list[dict]]:
    """Fit the model; returns the best-validation checkpoint and per-epoch log."""
    if not train_pairs:
        raise DataError("training split yields no windows")
    if not val_pairs:
        raise DataError("validation split yields no windows")
    X, Y = _stack(train_pairs)
    Xv, Yv = _stack(val_pairs)
    n = len(X)
    rng = np.random.default_rng(train_cfg.seed)
    state = ModelState.init(model_cfg, train_cfg.seed)
    shapes = {name: t.shape for name, t in state.params.items()}
    adam = Adam(shapes, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch

    def checkpoint_from(snapshot, moments, adam_step, epoch, val_mse):
        return Checkpoint(
            config=model_cfg,
            params=snapshot,
            moments=moments,
            adam_step=adam_step,
            rng_state=rng.bit_generator.state,
            norm_mean=None if stats is None else stats.mean,
            norm_std=None if stats is None else stats.std,
            best_epoch=epoch,
            best_val_mse=val_mse,
        )

    log: list[dict] = []
    best_val = math.inf
    best = checkpoint_from(_snapshot_f32(state.params), {}, 0, -1, math.nan)
    step = 0
    for epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        lr_main = train_cfg.base_lr
        for b0 in range(0, n, train_cfg.batch_size):
            idx = perm[b0 : b0 + train_cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            if train_cfg.augment:
                xb, yb = xb.copy(), yb.copy()
                for i in range(len(idx)):
                    xb[i], yb[i] = augment_pair(
                        xb[i], yb[i], rng, scale_one_plus=train_cfg.scale_aug_one_plus
                    )
            state.zero_grad()
            fp = forward(xb, state, training=True, rng=rng)
            loss = mse_loss(fp, yb)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // train_cfg.batch_size}"
                )
            loss.backward()
            if train_cfg.clip_norm is not None:
                sq = sum(
                    float((t.grad**2).sum()) for t in state.params.values() if t.grad is not None
                )
                norm = math.sqrt(sq)
                if norm > train_cfg.clip_norm:
                    scale = train_cfg.clip_norm / norm
                    for t in state.params.values():
                        if t.grad is not None:
                            t.grad *= scale
            lr_main, lr_special = lr_at(step, total_steps, train_cfg)
            adam.step(
                state.params,
                lambda name: lr_special if is_special_parameter(name) else lr_main,
            )
            epoch_losses.append(float(loss.data))
            step += 1
        val = evaluate_state(state, Xv, Yv)
        entry = {
            "epoch": epoch,
            "train_mse": float(np.mean(epoch_losses)),
            "val_mse": val["mse"],
            "lr": lr_main,
        }
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if val["mse"] < best_val:
            best_val = val["mse"]
            moments = {
                **{f"m.{k}": m.astype(np.float32) for k, m in adam.m.items()},
                **{f"v.{k}": v.astype(np.float32) for k, v in adam.v.items()},
            }
            best = checkpoint_from(
                _snapshot_f32(state.params), moments, adam.t, epoch, best_val
            )
    return best, log
