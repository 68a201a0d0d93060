"""Exponential smoothing attention (ESA) kernels.

Attention weights decay geometrically with relative time lag, independent
of token content. The naive kernel materializes the L x (L+1) attention
matrix (O(L^2)); the fast kernel evaluates the same triangular product as
an FFT cross-correlation (O(L log L)). On top of the two kernels sit the
multi-head growth extractor and the fast level-smoothing expansion.

Plain-ndarray functions carry the numerics and serve as oracles/benchmarks;
the `*_t` variants wrap them as differentiable graph nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .errors import DimensionError, DomainError


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"smoothing parameter must lie in (0, 1), got {alpha}")
    return alpha


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class EsaParams:
    """Smoothing parameter (stored unconstrained) and initial state of one head."""

    alpha_raw: float
    v0: np.ndarray

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.alpha_raw))

    @classmethod
    def from_alpha(cls, alpha: float, v0) -> "EsaParams":
        return cls(alpha_raw=_logit(_check_alpha(alpha)), v0=np.asarray(v0, dtype=np.float64))


def es_weights(alpha: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Decay weights for one smoothing pass of length L.

    weight[j] = alpha*(1-alpha)**(L-1-j) multiplies the observations;
    init_weight[j] = (1-alpha)**(j+1) multiplies the initial state.
    """
    alpha = _check_alpha(alpha)
    if L < 1:
        raise DimensionError(f"sequence length must be >= 1, got {L}")
    powers = np.arange(L, dtype=np.float64)
    weight = alpha * (1.0 - alpha) ** powers[::-1]
    init_weight = (1.0 - alpha) ** (powers + 1.0)
    return weight, init_weight


def attention_matrix(alpha: float, L: int) -> np.ndarray:
    """Explicit L x (L+1) smoothing-attention matrix.

    Column 0 weights the initial state; columns 1..L form a lower-triangular
    band where row t holds alpha*(1-alpha)**(t-j). Every row sums to 1.
    """
    alpha = _check_alpha(alpha)
    if L < 1:
        raise DimensionError(f"sequence length must be >= 1, got {L}")
    t = np.arange(1, L + 1, dtype=np.float64)[:, None]
    j = np.arange(1, L + 1, dtype=np.float64)[None, :]
    expo = t - j
    body = np.where(expo >= 0.0, alpha * (1.0 - alpha) ** np.maximum(expo, 0.0), 0.0)
    init_col = (1.0 - alpha) ** t
    return np.concatenate([init_col, body], axis=1)


def esa_naive(V: np.ndarray, params: EsaParams) -> np.ndarray:
    """Reference smoothing pass via the explicit attention-matrix product."""
    V = np.asarray(V, dtype=np.float64)
    L, d = V.shape[-2], V.shape[-1]
    v0 = np.asarray(params.v0, dtype=np.float64)
    if v0.shape != (d,):
        raise DimensionError(f"initial state shape {v0.shape} does not match value dim {d}")
    A = attention_matrix(params.alpha, L)
    v0_row = np.broadcast_to(v0, V.shape[:-2] + (1, d))
    return A @ np.concatenate([v0_row, V], axis=-2)


def conv1d_fft(V: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Causal cross-correlation of each column of V with a length-L weight.

    Equals the product of the lower-triangular Toeplitz matrix whose last
    row is `weight` with each column. weight may be (L,) shared across
    columns or (L, C) per column. Evaluated by zero-padding to the next
    fast FFT length, multiplying by the conjugate transform, inverting,
    rolling by -1 and selecting the trailing L samples.
    """
    V = np.asarray(V, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if V.ndim < 2:
        raise DimensionError(f"value matrix must be at least 2-d, got shape {V.shape}")
    L = V.shape[-2]
    if w.shape[0] != L:
        raise DimensionError(f"weight length {w.shape[0]} does not match sequence length {L}")
    if w.ndim == 2 and w.shape[1] not in (1, V.shape[-1]):
        raise DimensionError(f"weight shape {w.shape} does not broadcast to values {V.shape}")
    n = next_fast_len(2 * L - 1)
    fv = np.fft.rfft(V, n=n, axis=-2)
    fw = np.fft.rfft(w, n=n, axis=0)
    if w.ndim == 1:
        fw = fw[:, None]
    out = np.fft.irfft(fv * np.conj(fw), n=n, axis=-2)
    out = np.roll(out, -1, axis=-2)
    return out[..., n - L :, :]


def esa_fast(V: np.ndarray, params: EsaParams) -> np.ndarray:
    """O(L log L) smoothing pass; agrees with esa_naive to ~1e-12."""
    V = np.asarray(V, dtype=np.float64)
    L, d = V.shape[-2], V.shape[-1]
    v0 = np.asarray(params.v0, dtype=np.float64)
    if v0.shape != (d,):
        raise DimensionError(f"initial state shape {v0.shape} does not match value dim {d}")
    weight, init_weight = es_weights(params.alpha, L)
    return conv1d_fft(V, weight) + init_weight[:, None] * v0


def level_recurrence(
    level_prev: np.ndarray,
    s_obs: np.ndarray,
    b_obs: np.ndarray,
    alpha: np.ndarray,
    init_level: np.ndarray,
) -> np.ndarray:
    """Direct per-step level recurrence; oracle for the fast path.

    e_t = alpha*(level_prev_t - s_t) + (1-alpha)*(e_{t-1} + b_{t-1}),
    seeded with e_0 = init_level and b_0 = 0.
    """
    v = np.asarray(level_prev, dtype=np.float64) - np.asarray(s_obs, dtype=np.float64)
    b = np.asarray(b_obs, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    L = v.shape[-2]
    out = np.empty_like(v)
    init = np.asarray(init_level, dtype=np.float64)
    if init.ndim == v.ndim:  # tolerate (..., 1, m) seeds
        init = init[..., 0, :]
    prev = np.broadcast_to(init, v.shape[:-2] + (v.shape[-1],)).copy()
    for t in range(L):
        growth = b[..., t - 1, :] if t > 0 else 0.0
        prev = alpha * v[..., t, :] + (1.0 - alpha) * (prev + growth)
        out[..., t, :] = prev
    return out


# ---------------------------------------------------------------------------
# differentiable wrappers


def conv1d_fft_t(V: Tensor, weight: Tensor) -> Tensor:
    """Differentiable conv1d_fft; gradients for V and weight run through FFTs too."""
    V, weight = ad.as_tensor(V), ad.as_tensor(weight)
    out = conv1d_fft(V.data, weight.data)
    L = V.shape[-2]

    def vjp(g):
        # transpose of a causal Toeplitz product = time-reversed product
        gv = np.flip(conv1d_fft(np.flip(g, axis=-2), weight.data), axis=-2)
        n = next_fast_len(2 * L - 1)
        spec = np.fft.rfft(g, n=n, axis=-2) * np.conj(np.fft.rfft(V.data, n=n, axis=-2))
        corr = np.fft.irfft(spec, n=n, axis=-2)[..., :L, :]
        gw = np.flip(corr, axis=-2)
        gw = gw.reshape((-1, L, gw.shape[-1])).sum(axis=0)
        if weight.data.ndim == 1:
            gw = gw.sum(axis=-1)
        elif weight.shape[1] == 1:
            gw = gw.sum(axis=-1, keepdims=True)
        return gv, gw

    return make_node(out, (V, weight), vjp)


def es_weights_t(alpha: Tensor, L: int) -> tuple[Tensor, Tensor]:
    """Decay and init-state weights as graph nodes; alpha is scalar or (m,)."""
    powers = np.arange(L, dtype=np.float64)
    one_minus = ad.sub(1.0, alpha)
    weight = ad.mul(alpha, ad.pow_outer(one_minus, powers[::-1]))
    init_weight = ad.pow_outer(one_minus, powers + 1.0)
    return weight, init_weight


def esa_fast_t(V: Tensor, alpha: Tensor, v0: Tensor | None) -> Tensor:
    """Differentiable fast smoothing pass; v0=None drops the initial-state term."""
    L = V.shape[-2]
    weight, init_weight = es_weights_t(alpha, L)
    out = conv1d_fft_t(V, weight)
    if v0 is not None:
        init = ad.mul(ad.reshape(init_weight, (L, 1)), v0)
        out = ad.add(out, init)
    return out


def mh_esa(
    z: Tensor,
    alpha_raw: Tensor,
    v0: Tensor,
    w_in: Tensor,
    b_in: Tensor,
    w_out: Tensor,
    b_out: Tensor,
    n_heads: int,
) -> Tensor:
    """Multi-head growth extraction from a latent residual.

    Projects z, takes successive time differences (v0 is the phantom
    predecessor of the first step), smooths each head's differences with
    its own decay rate, then mixes heads back with the output projection.
    The smoothing of the differences starts from a zero state: v0 is
    consumed entirely by the differencing.
    """
    d = z.shape[-1]
    if d % n_heads != 0:
        raise DimensionError(f"model dim {d} is not divisible by {n_heads} heads")
    L = z.shape[-2]
    d_h = d // n_heads
    zp = ad.linear(z, w_in, b_in)
    v0_row = ad.broadcast_to(ad.reshape(v0, (1, d)), zp.shape[:-2] + (1, d))
    prev = ad.concat([v0_row, zp[..., : L - 1, :]], axis=-2) if L > 1 else v0_row
    diffs = ad.sub(zp, prev)
    alpha = ad.sigmoid(alpha_raw)
    heads = []
    for h in range(n_heads):
        head = diffs[..., h * d_h : (h + 1) * d_h]
        heads.append(esa_fast_t(head, alpha[h], None))
    mixed = ad.concat(heads, axis=-1)
    return ad.linear(mixed, w_out, b_out)


def level_smoothing(
    level_prev: Tensor,
    s_obs: Tensor,
    b_obs: Tensor,
    alpha: Tensor,
    init_level: Tensor,
) -> Tensor:
    """Fast level update in observation space.

    Expands the recurrence e_t = alpha*(level_prev_t - s_t)
    + (1-alpha)*(e_{t-1} + b_{t-1}) into one smoothing pass over the
    de-seasonalized series plus a growth-accumulation correlation, both
    via conv1d_fft. alpha is per-channel (m,); init_level seeds e_0.
    """
    level_prev, s_obs, b_obs = map(ad.as_tensor, (level_prev, s_obs, b_obs))
    if level_prev.shape != s_obs.shape or level_prev.shape != b_obs.shape:
        raise DimensionError(
            f"level/seasonal/growth shapes differ: {level_prev.shape}, {s_obs.shape}, {b_obs.shape}"
        )
    alpha = ad.as_tensor(alpha)
    if alpha.shape != (level_prev.shape[-1],):
        raise DimensionError(
            f"per-channel alpha shape {alpha.shape} does not match {level_prev.shape[-1]} channels"
        )
    L = level_prev.shape[-2]
    v = ad.sub(level_prev, s_obs)
    weight, init_weight = es_weights_t(alpha, L)
    smoothed = conv1d_fft_t(v, weight)
    init_term = ad.mul(init_weight, init_level)
    # growth enters with lag >= 1: same decay profile, current step masked out
    desc = np.arange(L - 1, -1, -1, dtype=np.float64)
    one_minus = ad.sub(1.0, alpha)
    mask = np.ones((L, 1))
    mask[L - 1, 0] = 0.0
    aux_weight = ad.mul(ad.pow_outer(one_minus, desc), mask)
    aux = conv1d_fft_t(b_obs, aux_weight)
    return ad.add(ad.add(smoothed, init_term), aux)
