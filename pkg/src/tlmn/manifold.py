"""Delay embedding of an input window into lagged state vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ManifoldConfig:
    k: int = 5
    stride: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"embedding length k must be >= 1, got {self.k}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    def output_length(self, source_len: int) -> int:
        if source_len < self.k:
            raise ShapeError(f"window of length {source_len} is shorter than k = {self.k}")
        return (source_len - self.k) // self.stride + 1

    def last_lag_rows(self, source_len: int) -> np.ndarray:
        """Index of the most recent input row feeding each output row."""
        return np.arange(self.output_length(source_len)) * self.stride + self.k - 1


@dataclass(frozen=True)
class ManifoldTensor:
    values: np.ndarray  # (..., L, F*k)
    source_len: int
    feature_width: int


def delay_embed(window, cfg: ManifoldConfig = ManifoldConfig()) -> ManifoldTensor:
    """Stack ``k`` consecutive rows of a (..., T, F) window into (..., L, F*k).

    Output row ``i`` is rows ``i*stride .. i*stride+k-1`` concatenated from
    oldest to newest, each lag contributing its F features contiguously.
    """
    x = np.asarray(window)
    if x.ndim < 2:
        raise ShapeError(f"window must be at least 2-D (T, F), got shape {x.shape}")
    t, f = x.shape[-2:]
    cfg.output_length(t)
    # (..., T-k+1, F, k) -> (..., L, k, F)
    views = sliding_window_view(x, cfg.k, axis=-2)[..., :: cfg.stride, :, :]
    values = np.swapaxes(views, -1, -2).reshape(x.shape[:-2] + (views.shape[-3], cfg.k * f))
    return ManifoldTensor(values, t, f)


def delay_embed_adjoint(grad, source_len: int, feature_width: int, cfg: ManifoldConfig = ManifoldConfig()) -> np.ndarray:
    """Transpose of :func:`delay_embed`: scatter-add (..., L, F*k) back to (..., T, F)."""
    g = np.asarray(grad)
    lead = g.shape[:-2]
    n_out = cfg.output_length(source_len)
    if g.shape[-2:] != (n_out, cfg.k * feature_width):
        raise ShapeError(f"gradient shape {g.shape[-2:]} does not match ({n_out}, {cfg.k * feature_width})")
    g = g.reshape(lead + (n_out, cfg.k, feature_width))
    out = np.zeros(lead + (source_len, feature_width), dtype=g.dtype)
    rows = np.arange(n_out) * cfg.stride
    for lag in range(cfg.k):
        out[..., rows + lag, :] += g[..., :, lag, :]
    return out


def reconstruct_window(tensor: ManifoldTensor, cfg: ManifoldConfig = ManifoldConfig()) -> np.ndarray:
    """Recover the source window from a stride-1 embedding."""
    if cfg.stride != 1:
        raise ConfigError("reconstruction requires stride 1")
    v = tensor.values
    f = tensor.feature_width
    first = v[..., :, :f]  # oldest lag of each row
    tail = v[..., -1, f:].reshape(v.shape[:-2] + (cfg.k - 1, f))
    return np.concatenate([first, tail], axis=-2)
