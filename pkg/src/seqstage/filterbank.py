"""Channel-specific learnable frequency-domain filterbank layers.

The trainable weights pass through a sigmoid and are masked elementwise by a
fixed triangular shape matrix, so the effective filters stay non-negative,
band-limited, and ordered in frequency no matter what the optimizer does.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def build_triangular_matrix(n_bins: int, n_filters: int) -> np.ndarray:
    """Linear-frequency triangular shape matrix, [n_bins][n_filters].

    Filter centers are spaced linearly over [0, n_bins-1]; column m rises
    linearly from center m-1 to its own center and falls to center m+1,
    sampled at integer bins and peak-normalized to 1. A column whose support
    straddles no integer bin gets its rounded center bin set to 1 instead,
    so there are no dead filters.
    """
    if not 1 <= n_filters < n_bins:
        raise ValueError(f"need 1 <= n_filters < n_bins, got {n_filters} and {n_bins}")
    centers = np.linspace(0.0, n_bins - 1.0, n_filters + 2)
    bins = np.arange(n_bins, dtype=np.float64)
    tri = np.zeros((n_bins, n_filters))
    for m in range(n_filters):
        lo, mid, hi = centers[m], centers[m + 1], centers[m + 2]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        col = np.maximum(0.0, np.minimum(rising, falling))
        peak = col.max()
        if peak <= 0.0:
            col[int(round(mid))] = 1.0
        else:
            col /= peak
        tri[:, m] = col
    return tri


@dataclass
class FilterbankLayer:
    """Trainable raw weights plus the fixed triangular mask for one channel."""

    raw_weights: Tensor
    shape: np.ndarray = field(repr=False)
    channel_index: int = 0

    @property
    def n_bins(self) -> int:
        return self.shape.shape[0]

    @property
    def n_filters(self) -> int:
        return self.shape.shape[1]

    def effective_weights(self) -> Tensor:
        """sigmoid(raw) * shape; entries in [0, shape], zero off-band."""
        return ad.elementwise_mul(ad.sigmoid(self.raw_weights), self.shape)


def make_filterbank_layer(n_bins: int, n_filters: int, channel_index: int = 0,
                          store=None, name: str | None = None) -> FilterbankLayer:
    """Fresh layer with raw weights at zero (effective weights = 0.5 * shape)."""
    shape = build_triangular_matrix(n_bins, n_filters)
    raw = np.zeros((n_bins, n_filters))
    if store is not None:
        t = store.add(name or f"filterbank/ch{channel_index}/raw", raw)
    else:
        t = Tensor(raw, requires_grad=True)
    return FilterbankLayer(raw_weights=t, shape=shape, channel_index=channel_index)


def apply_filterbank(spectrogram, layer: FilterbankLayer) -> Tensor:
    """Filter an [F][T] spectrogram down to [M][T]: (sigmoid(W) * T_shape)^T @ S."""
    s = ad.as_tensor(spectrogram)
    if s.ndim != 2 or s.shape[0] != layer.n_bins:
        raise ShapeError(f"spectrogram shape {s.shape} does not match {layer.n_bins} bins")
    return ad.matmul(layer.effective_weights(), s, transpose_a=True)


def filter_and_concat(image, layers: list[FilterbankLayer]) -> Tensor:
    """Apply channel c's layer to channel c and stack outputs along frequency.

    ``image`` is [F][T][C]; the result is [M*C][T] with channel blocks in
    channel order.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"image must be [F][T][C], got shape {image.shape}")
    if image.shape[2] != len(layers):
        raise ShapeError(f"image has {image.shape[2]} channels but {len(layers)} layers given")
    blocks = [apply_filterbank(image[:, :, c], layers[c]) for c in range(len(layers))]
    return ad.concat(blocks, axis=0)
