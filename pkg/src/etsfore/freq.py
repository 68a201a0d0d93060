"""Frequency attention: real DFT, top-K amplitude selection (mean term
excluded), and sinusoidal extrapolation over arbitrary index ranges.

Bin indices are 0-based throughout: bin 0 is the DC/mean term and is never
selectable; bin b has frequency b/L cycles per step. Each selected bin
contributes its conjugate pair as well, which doubles the real cosine term
(except the self-conjugate Nyquist bin of an even-length signal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .errors import ConfigError, DimensionError


def dft_real(x: np.ndarray) -> np.ndarray:
    """Forward DFT of a real signal, keeping the floor(L/2)+1 unique coefficients."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError(f"dft_real expects a nonempty 1-d signal, got shape {x.shape}")
    return np.fft.rfft(x)


def idft_real(c: np.ndarray, L: int) -> np.ndarray:
    """Inverse of dft_real for a length-L signal."""
    return np.fft.irfft(np.asarray(c), n=L)


@dataclass
class SpectrumSelection:
    """Top-K non-DC bins of one channel with their amplitude/phase/frequency."""

    bins: np.ndarray  # (K,) ints >= 1, distinct
    amplitudes: np.ndarray  # (K,) >= 0
    phases: np.ndarray  # (K,) in (-pi, pi]
    frequencies: np.ndarray  # (K,) cycles per step, = bins / L


def topk_select(amplitudes: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest amplitudes among bins 1..F-1.

    Ties break toward the smaller bin. Works per channel on (..., F, C)
    input; a plain (F,) vector returns a (k,) index array.
    """
    amp = np.asarray(amplitudes, dtype=np.float64)
    vec = amp.ndim == 1
    if vec:
        amp = amp[:, None]
    F = amp.shape[-2]
    if not 0 <= k <= F - 1:
        raise ConfigError(f"top-k count {k} must lie in [0, {F - 1}] for {F} bins")
    if k == 0:
        bins = np.zeros(amp.shape[:-2] + (0, amp.shape[-1]), dtype=np.intp)
    else:
        order = np.argsort(-amp[..., 1:, :], axis=-2, kind="stable")
        bins = 1 + order[..., :k, :]
    return bins[..., 0] if vec else bins


def spectrum_selection(x: np.ndarray, k: int) -> SpectrumSelection:
    """Select the k dominant non-DC bins of a 1-d signal."""
    c = dft_real(x)
    bins = topk_select(np.abs(c), k)
    sel = c[bins]
    return SpectrumSelection(
        bins=bins,
        amplitudes=np.abs(sel),
        phases=np.angle(sel),
        frequencies=bins / len(np.asarray(x)),
    )


def _project_selected(x: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Orthogonal projection of each channel onto its selected Fourier pairs.

    Zeroes every unselected coefficient (DC included) and inverts; the
    result on 0..L-1 is the periodic seasonal pattern, and the map is a
    symmetric projection, so it serves as its own adjoint in the backward
    pass.
    """
    L = x.shape[-2]
    c = np.fft.rfft(x, axis=-2)
    masked = np.zeros_like(c)
    np.put_along_axis(masked, bins, np.take_along_axis(c, bins, axis=-2), axis=-2)
    return np.fft.irfft(masked, n=L, axis=-2)


def fourier_extrapolate_np(
    x: np.ndarray, k: int, j_range: np.ndarray, bins: np.ndarray | None = None
) -> np.ndarray:
    """Seasonal pattern of x evaluated at integer indices j_range.

    x: (..., L, C). Selects the k largest non-DC bins per channel (or uses
    the pinned `bins`) and sums the selected conjugate cosine pairs. The
    1/L inverse normalization makes a full non-DC selection reconstruct
    the de-meaned input exactly on 0..L-1; any j is the length-L periodic
    continuation of that pattern.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"expected (..., L, C) input, got shape {x.shape}")
    L = x.shape[-2]
    j = np.asarray(j_range, dtype=np.intp)
    if bins is None:
        bins = topk_select(np.abs(np.fft.rfft(x, axis=-2)), k)
    if bins.shape[-2] == 0:
        return np.zeros(x.shape[:-2] + (len(j), x.shape[-1]))
    return _project_selected(x, bins)[..., j % L, :]


def fourier_extrapolate(
    x: Tensor, k: int, j_range: np.ndarray, bins: np.ndarray | None = None
) -> Tensor:
    """Differentiable seasonal extrapolation.

    The bin selection is recomputed from the forward values and held fixed
    under differentiation; gradients flow only through the coefficients,
    for which the map is linear in x.
    """
    x = ad.as_tensor(x)
    L = x.shape[-2]
    j = np.asarray(j_range, dtype=np.intp)
    if bins is None:
        bins = topk_select(np.abs(np.fft.rfft(x.data, axis=-2)), k)
    if bins.shape[-2] == 0:
        out = np.zeros(x.shape[:-2] + (len(j), x.shape[-1]))
        return make_node(out, (x,), lambda g: (np.zeros(x.shape),))
    residues = j % L
    out = _project_selected(x.data, bins)[..., residues, :]

    def vjp(g):
        gathered = np.zeros(x.shape)
        np.add.at(gathered, (Ellipsis, residues, slice(None)), g)
        return (_project_selected(gathered, bins),)

    return make_node(out, (x,), vjp)
