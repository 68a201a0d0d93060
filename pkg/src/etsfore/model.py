"""The forecasting network: embedding, cascaded seasonal/growth extraction,
level smoothing, and horizon decoding into level + damped growth + seasonal
components whose sum is the forecast.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import esa, freq
from .autodiff import Tensor
from .errors import ConfigError, DataError, DimensionError, DomainError


@dataclass
class ModelConfig:
    lookback: int
    horizon: int
    channels: int = 1
    dim: int = 32
    ff_dim: int = 128
    layers: int = 2
    heads: int = 4
    top_k: int = 2
    dropout: float = 0.2
    kernel_size: int = 3

    def __post_init__(self):
        for name in ("lookback", "horizon", "channels", "dim", "ff_dim", "layers", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model config: {name} must be positive, got {getattr(self, name)}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"model dim {self.dim} must be divisible by heads {self.heads}")
        if not 0 <= self.top_k <= self.lookback // 2:
            raise ConfigError(
                f"top_k {self.top_k} must lie in [0, {self.lookback // 2}] for lookback {self.lookback}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Fixed name -> shape map of every learnable parameter."""
    k, m, d, ff, nh = cfg.kernel_size, cfg.channels, cfg.dim, cfg.ff_dim, cfg.heads
    shapes: dict[str, tuple[int, ...]] = {"embed.kernel": (k, m, d)}
    for n in range(cfg.layers):
        p = f"enc{n}"
        shapes[f"{p}.esa.w_in"] = (d, d)
        shapes[f"{p}.esa.b_in"] = (d,)
        shapes[f"{p}.esa.w_out"] = (d, d)
        shapes[f"{p}.esa.b_out"] = (d,)
        shapes[f"{p}.esa.alpha_raw"] = (nh,)
        shapes[f"{p}.esa.v0"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, ff)
        shapes[f"{p}.ff.b1"] = (ff,)
        shapes[f"{p}.ff.w2"] = (ff, d)
        shapes[f"{p}.ff.b2"] = (d,)
        shapes[f"{p}.ln1.gamma"] = (d,)
        shapes[f"{p}.ln1.beta"] = (d,)
        shapes[f"{p}.ln2.gamma"] = (d,)
        shapes[f"{p}.ln2.beta"] = (d,)
        shapes[f"{p}.level.w_season"] = (d, m)
        shapes[f"{p}.level.b_season"] = (m,)
        shapes[f"{p}.level.w_growth"] = (d, m)
        shapes[f"{p}.level.b_growth"] = (m,)
        shapes[f"dec{n}.gamma_raw"] = (nh,)
    shapes["level.alpha_raw"] = (m,)
    # bias-free so the per-component projection sums exactly to the total
    shapes["head.w_out"] = (d, m)
    return shapes


SPECIAL_SUFFIXES = ("alpha_raw", "gamma_raw")


def is_special_parameter(name: str) -> bool:
    """Smoothing/damping rates get the enlarged, unscheduled learning rate."""
    return name.endswith(SPECIAL_SUFFIXES)


class ModelState:
    """Named parameter tensors plus the architecture they belong to."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ConfigError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, t in params.items():
            if t.shape != expected[name]:
                raise DimensionError(
                    f"parameter {name} has shape {t.shape}, expected {expected[name]}"
                )
        self.config = config
        self.params = {name: params[name] for name in expected}

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelState":
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith((".b_in", ".b_out", ".b1", ".b2", ".beta", ".v0",
                              ".b_season", ".b_growth", "alpha_raw", "gamma_raw")):
                data = np.zeros(shape)
            elif name.endswith(".gamma"):
                data = np.ones(shape)
            else:
                fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
                data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


@dataclass
class DecomposedForecast:
    """Horizon components; total == level + growth + seasonal by construction."""

    level: np.ndarray
    growth: np.ndarray
    seasonal: np.ndarray
    total: np.ndarray


@dataclass
class ForwardPass:
    """Graph outputs of one forward evaluation (all Tensors)."""

    total: Tensor
    level_horizon: Tensor
    growth_horizon: Tensor
    seasonal_horizon: Tensor
    level_series: Tensor
    stack_growth: list[Tensor] = field(default_factory=list)
    stack_seasonal: list[Tensor] = field(default_factory=list)


def input_embed(x: Tensor, state: ModelState, training: bool = False, rng=None) -> Tensor:
    """Map the lookback window to latent space with a temporal convolution."""
    x = ad.as_tensor(x)
    if not np.isfinite(x.data).all():
        raise DataError("input window contains non-finite values")
    z = ad.conv1d_temporal(x, state["embed.kernel"])
    return ad.dropout(z, state.config.dropout, training, rng)


def encoder_layer(
    res_in: Tensor, state: ModelState, n: int, training: bool = False, rng=None
):
    """One extraction stage: seasonal removal, growth removal, feedforward.

    Returns (res_out, growth_latent, seasonal_latent), each (..., L, d).
    """
    cfg = state.config
    p = f"enc{n}"
    lookback_idx = np.arange(cfg.lookback)
    s = freq.fourier_extrapolate(res_in, cfg.top_k, lookback_idx)
    s = ad.dropout(s, cfg.dropout, training, rng)
    res = ad.sub(res_in, s)
    b = esa.mh_esa(
        res,
        state[f"{p}.esa.alpha_raw"],
        state[f"{p}.esa.v0"],
        state[f"{p}.esa.w_in"],
        state[f"{p}.esa.b_in"],
        state[f"{p}.esa.w_out"],
        state[f"{p}.esa.b_out"],
        cfg.heads,
    )
    b = ad.dropout(b, cfg.dropout, training, rng)
    res = ad.layer_norm(ad.sub(res, b), state[f"{p}.ln1.gamma"], state[f"{p}.ln1.beta"])
    hidden = ad.sigmoid(ad.linear(res, state[f"{p}.ff.w1"], state[f"{p}.ff.b1"]))
    hidden = ad.dropout(hidden, cfg.dropout, training, rng)
    ff = ad.linear(hidden, state[f"{p}.ff.w2"], state[f"{p}.ff.b2"])
    res_out = ad.layer_norm(ad.add(res, ff), state[f"{p}.ln2.gamma"], state[f"{p}.ln2.beta"])
    return res_out, b, s


def level_pipeline(
    x: Tensor, seasonal_latents: list[Tensor], growth_latents: list[Tensor], state: ModelState
) -> Tensor:
    """Iterate the fast level update across layers, starting from the raw window."""
    alpha = ad.sigmoid(state["level.alpha_raw"])
    level = ad.as_tensor(x)
    for n, (s_lat, b_lat) in enumerate(zip(seasonal_latents, growth_latents)):
        p = f"enc{n}"
        s_obs = ad.linear(s_lat, state[f"{p}.level.w_season"], state[f"{p}.level.b_season"])
        b_obs = ad.linear(b_lat, state[f"{p}.level.w_growth"], state[f"{p}.level.b_growth"])
        init = ad.sub(level, s_obs)[..., 0:1, :]
        level = esa.level_smoothing(level, s_obs, b_obs, alpha, init)
    return level


def damping_profile(gammas: np.ndarray, horizon: int) -> np.ndarray:
    """Partial geometric sums sum_{i<=j} gamma**i for j = 1..horizon, per head."""
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    if np.any(g <= 0.0) or np.any(g >= 1.0):
        raise DomainError(f"damping factors must lie in (0, 1), got {g}")
    powers = g[None, :] ** np.arange(1, horizon + 1, dtype=np.float64)[:, None]
    return np.cumsum(powers, axis=0)


def growth_damping(b_last: np.ndarray, horizon: int, gammas: np.ndarray) -> np.ndarray:
    """Spread the last growth token across the horizon with damped weights.

    b_last: (d,) with channels split evenly across len(gammas) heads.
    """
    b_last = np.asarray(b_last, dtype=np.float64)
    g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    d = b_last.shape[-1]
    if d % len(g) != 0:
        raise DimensionError(f"growth dim {d} is not divisible by {len(g)} heads")
    coef = np.repeat(damping_profile(g, horizon), d // len(g), axis=-1)
    return coef * b_last


def _growth_damping_t(
    b_last: Tensor, horizon: int, gamma_raw: Tensor, n_heads: int, d: int,
    p: float, training: bool, rng,
) -> Tensor:
    gamma = ad.sigmoid(gamma_raw)
    powers = ad.pow_outer(gamma, np.arange(1, horizon + 1, dtype=np.float64))
    coef = ad.repeat_channels(ad.cumsum(powers, axis=0), d // n_heads)
    coef = ad.dropout(coef, p, training, rng)
    return ad.mul(coef, b_last)


def forward(x, state: ModelState, training: bool = False, rng=None) -> ForwardPass:
    """Full forward pass. x: (..., L, m) normalized observations."""
    cfg = state.config
    x = ad.as_tensor(x)
    if x.ndim < 2 or x.shape[-2] != cfg.lookback or x.shape[-1] != cfg.channels:
        raise DataError(
            f"input window shape {x.shape} does not match (lookback, channels) "
            f"= ({cfg.lookback}, {cfg.channels})"
        )
    z = input_embed(x, state, training, rng)
    seasonal_latents, growth_latents = [], []
    res = z
    for n in range(cfg.layers):
        res, b, s = encoder_layer(res, state, n, training, rng)
        growth_latents.append(b)
        seasonal_latents.append(s)

    level = level_pipeline(x, seasonal_latents, growth_latents, state)
    e_last = level[..., cfg.lookback - 1 : cfg.lookback, :]
    level_horizon = ad.broadcast_to(e_last, x.shape[:-2] + (cfg.horizon, cfg.channels))

    horizon_idx = np.arange(cfg.lookback, cfg.lookback + cfg.horizon)
    w_head = state["head.w_out"]
    stack_growth, stack_seasonal = [], []
    for n in range(cfg.layers):
        b_last = growth_latents[n][..., cfg.lookback - 1 : cfg.lookback, :]
        g_hor = _growth_damping_t(
            b_last, cfg.horizon, state[f"dec{n}.gamma_raw"], cfg.heads, cfg.dim,
            cfg.dropout, training, rng,
        )
        s_hor = freq.fourier_extrapolate(seasonal_latents[n], cfg.top_k, horizon_idx)
        stack_growth.append(ad.matmul(g_hor, w_head))
        stack_seasonal.append(ad.matmul(s_hor, w_head))

    growth_horizon = stack_growth[0]
    seasonal_horizon = stack_seasonal[0]
    for n in range(1, cfg.layers):
        growth_horizon = ad.add(growth_horizon, stack_growth[n])
        seasonal_horizon = ad.add(seasonal_horizon, stack_seasonal[n])
    total = ad.add(ad.add(level_horizon, growth_horizon), seasonal_horizon)
    return ForwardPass(
        total=total,
        level_horizon=level_horizon,
        growth_horizon=growth_horizon,
        seasonal_horizon=seasonal_horizon,
        level_series=level,
        stack_growth=stack_growth,
        stack_seasonal=stack_seasonal,
    )


def forecast(x, state: ModelState) -> DecomposedForecast:
    """Inference-mode decomposed forecast for one window or a batch."""
    with ad.no_grad():
        fp = forward(x, state, training=False)
    return DecomposedForecast(
        level=fp.level_horizon.data,
        growth=fp.growth_horizon.data,
        seasonal=fp.seasonal_horizon.data,
        total=fp.total.data,
    )


def decompose(x, state: ModelState):
    """Forecast plus the per-stack horizon components and the level series.

    Returns (DecomposedForecast, stack_growth list, stack_seasonal list,
    level_series), all observation-space ndarrays.
    """
    with ad.no_grad():
        fp = forward(x, state, training=False)
    dec = DecomposedForecast(
        level=fp.level_horizon.data,
        growth=fp.growth_horizon.data,
        seasonal=fp.seasonal_horizon.data,
        total=fp.total.data,
    )
    return (
        dec,
        [t.data for t in fp.stack_growth],
        [t.data for t in fp.stack_seasonal],
        fp.level_series.data,
    )


def mse_loss(fp: ForwardPass, target) -> Tensor:
    target = ad.as_tensor(target)
    if target.shape != fp.total.shape:
        raise DimensionError(
            f"target shape {target.shape} does not match forecast {fp.total.shape}"
        )
    diff = ad.sub(fp.total, target)
    return ad.tmean(ad.mul(diff, diff))


def config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    known = {f for f in ModelConfig.__dataclass_fields__}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown model config keys: {unknown}")
    missing = [f for f in ("lookback", "horizon") if f not in d]
    if missing:
        raise ConfigError(f"missing model config keys: {missing}")
    return ModelConfig(**d)
