"""Dataset handling: CSV ingestion, normalization, chronological splits,
windowing, the synthetic saturating-trend + two-tone benchmark generator,
training-time augmentations, and evaluation metrics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import DataError, DimensionError, ParseError


@dataclass
class Series:
    """Multivariate series in observation space: values (T, m)."""

    values: np.ndarray
    timestamps: list[str] | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"series values must be (T, m) with T >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("series contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise DataError(f"split fractions must be positive: {self}")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1: {self}")


@dataclass
class WindowPair:
    """One training example: target starts exactly where the lookback ends."""

    lookback: np.ndarray  # (L, m)
    target: np.ndarray  # (H, m)
    origin: int  # index of the first target step within the source series


def load_csv(path: str) -> Series:
    """Parse a header-ed CSV of numeric channels, optional ISO-8601 first column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [(reader.line_num, row) for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")

    def looks_like_timestamp(cell: str) -> bool:
        try:
            float(cell)
            return False
        except ValueError:
            pass
        try:
            datetime.fromisoformat(cell)
            return True
        except ValueError:
            return False

    has_ts = looks_like_timestamp(rows[0][1][0])
    first_data_col = 1 if has_ts else 0
    names = [h.strip() for h in header[first_data_col:]]
    timestamps: list[str] | None = [] if has_ts else None
    values = np.empty((len(rows), len(names)))
    for i, (line_no, row) in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
        if has_ts:
            try:
                datetime.fromisoformat(row[0])
            except ValueError:
                raise ParseError(f"{path}: line {line_no}: bad timestamp {row[0]!r}") from None
            timestamps.append(row[0])
        for j, cell in enumerate(row[first_data_col:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: line {line_no}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {line_no}: non-finite value {cell!r}")
            values[i, j] = v
    return Series(values=values, timestamps=timestamps, names=names)


def write_csv(series: Series, path: str) -> None:
    """Inverse of load_csv; full float precision so round-trips are exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = series.names or [f"ch{j}" for j in range(series.channels)]
        if series.timestamps is not None:
            writer.writerow(["timestamp"] + names)
            for ts, row in zip(series.timestamps, series.values):
                writer.writerow([ts] + [f"{v:.17g}" for v in row])
        else:
            writer.writerow(names)
            for row in series.values:
                writer.writerow([f"{v:.17g}" for v in row])


@dataclass
class NormStats:
    mean: np.ndarray  # (m,)
    std: np.ndarray  # (m,), degenerate channels guarded to 1


def compute_stats(train_values: np.ndarray) -> NormStats:
    values = np.asarray(train_values, dtype=np.float64).reshape(-1, np.shape(train_values)[-1])
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return NormStats(mean=mean, std=std)


def normalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def split_chronological(
    series: Series, spec: SplitSpec, min_len: int = 1
) -> tuple[Series, Series, Series]:
    """Contiguous, ordered, non-overlapping train/val/test split."""
    T = series.length
    n_train = int(spec.train * T)
    n_val = int(spec.val * T)
    bounds = (0, n_train, n_train + n_val, T)
    lengths = tuple(bounds[i + 1] - bounds[i] for i in range(3))
    if min(lengths) < min_len:
        raise DataError(
            f"series of length {T} too short for split {lengths}: every part needs >= {min_len} steps"
        )
    parts = []
    for i in range(3):
        lo, hi = bounds[i], bounds[i + 1]
        ts = series.timestamps[lo:hi] if series.timestamps is not None else None
        parts.append(Series(series.values[lo:hi], timestamps=ts, names=series.names))
    return tuple(parts)


def window_dataset(series: Series, lookback: int, horizon: int, stride: int = 1) -> list[WindowPair]:
    """All contiguous (lookback, target) pairs at the given stride."""
    T = series.length
    if T < lookback + horizon:
        raise DataError(
            f"series length {T} shorter than lookback+horizon = {lookback + horizon}"
        )
    pairs = []
    for start in range(0, T - lookback - horizon + 1, stride):
        t = start + lookback
        pairs.append(
            WindowPair(
                lookback=series.values[start:t],
                target=series.values[t : t + horizon],
                origin=t,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# synthetic benchmark data

TREND_RATE = -0.2
TREND_MIDPOINT = 192.0
TONE_FREQS = (1.0 / 10.0, 1.0 / 13.0)
TONE_AMPS = (0.15, 0.15)
SYNTH_LOOKBACK = 192
SYNTH_HORIZON = 48


def synth_trend(t: np.ndarray) -> np.ndarray:
    """Saturating logistic trend; equals 0.5 at the midpoint step."""
    t = np.asarray(t, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(TREND_RATE * (t - TREND_MIDPOINT)))


def synth_seasonal(t: np.ndarray) -> np.ndarray:
    """Two-tone periodic pattern with periods 10 and 13."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for f, a in zip(TONE_FREQS, TONE_AMPS):
        out += a * np.cos(2.0 * np.pi * f * t)
    return out


@dataclass
class SynthDataset:
    """Generated instances, one univariate window pair each: values (n, L+H, 1)."""

    values: np.ndarray
    lookback: int
    horizon: int
    noise_std: float
    seed: int

    def window_pairs(self) -> list[WindowPair]:
        L = self.lookback
        return [
            WindowPair(lookback=v[:L], target=v[L:], origin=L) for v in self.values
        ]


def synth_generate(
    num_instances: int,
    noise_std: float,
    seed: int,
    lookback: int = SYNTH_LOOKBACK,
    horizon: int = SYNTH_HORIZON,
) -> SynthDataset:
    """Instance i is trend(t) + seasonal(t + i) + noise over t = 1..L+H."""
    if noise_std < 0:
        raise DataError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    t = np.arange(1, lookback + horizon + 1, dtype=np.float64)
    rows = np.empty((num_instances, lookback + horizon))
    trend = synth_trend(t)
    for i in range(num_instances):
        rows[i] = trend + synth_seasonal(t + i)
    if noise_std > 0:
        rows += rng.normal(0.0, noise_std, size=rows.shape)
    return SynthDataset(
        values=rows[..., None],
        lookback=lookback,
        horizon=horizon,
        noise_std=noise_std,
        seed=seed,
    )


SYNTH_MAGIC = "# etsfore-synth"


def write_synth_csv(ds: SynthDataset, path: str) -> None:
    """Instance CSV with a metadata comment row, then (instance, t, value) rows."""
    with open(path, "w", newline="") as fh:
        fh.write(
            f"{SYNTH_MAGIC} lookback={ds.lookback} horizon={ds.horizon} "
            f"noise={ds.noise_std!r} seed={ds.seed} instances={len(ds.values)}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["instance", "t", "value"])
        for i, row in enumerate(ds.values[:, :, 0]):
            for t, v in enumerate(row, start=1):
                writer.writerow([i, t, f"{v:.17g}"])


def read_synth_csv(path: str) -> SynthDataset:
    with open(path, newline="") as fh:
        meta_line = fh.readline().strip()
        if not meta_line.startswith(SYNTH_MAGIC):
            raise ParseError(f"{path}: not an instance dataset (missing metadata row)")
        meta = dict(kv.split("=") for kv in meta_line[len(SYNTH_MAGIC) :].split())
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["instance", "t", "value"]:
            raise ParseError(f"{path}: unexpected header {header}")
        L, H = int(meta["lookback"]), int(meta["horizon"])
        n = int(meta["instances"])
        values = np.empty((n, L + H))
        for line_no, row in enumerate(reader, start=3):
            try:
                i, t, v = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: line {line_no}: malformed row {row!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: line {line_no}: non-finite value")
            values[i, t - 1] = v
    return SynthDataset(
        values=values[..., None],
        lookback=L,
        horizon=H,
        noise_std=float(meta["noise"]),
        seed=int(meta["seed"]),
    )


def is_synth_csv(path: str) -> bool:
    with open(path) as fh:
        return fh.readline().startswith(SYNTH_MAGIC)


# ---------------------------------------------------------------------------
# augmentation and metrics

AUGMENT_SIGMA = 0.2


def augment_pair(
    lookback: np.ndarray,
    target: np.ndarray,
    rng: np.random.Generator,
    stage_prob: float = 0.5,
    scale_one_plus: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Scale, shift, jitter — in that order, each firing independently.

    The same draw is applied to lookback and target so the pair stays
    consistent. Scale multiplies by eps ~ N(0, 0.2) as-is by default;
    scale_one_plus uses (1 + eps) instead.
    """
    joined = np.concatenate([lookback, target], axis=0).astype(np.float64, copy=True)
    if rng.random() < stage_prob:
        eps = rng.normal(0.0, AUGMENT_SIGMA)
        joined *= (1.0 + eps) if scale_one_plus else eps
    if rng.random() < stage_prob:
        joined += rng.normal(0.0, AUGMENT_SIGMA)
    if rng.random() < stage_prob:
        joined += rng.normal(0.0, AUGMENT_SIGMA, size=joined.shape)
    L = lookback.shape[0]
    return joined[:L], joined[L:]


def metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(MSE, MAE) as means over every entry."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))
