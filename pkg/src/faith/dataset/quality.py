"""SSIM and the post-edit quality gate."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .manifest import SampleRecord

C1 = 0.01**2
C2 = 0.03**2
WINDOW = 8


def ssim(a, b, window: int = WINDOW) -> float:
    """Mean SSIM over all ``window x window`` patches (stride 1) and channels.

    Uniform windows with population statistics; unit dynamic range.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.ndim != 3 or x.shape[1] < window or x.shape[2] < window:
        raise ValueError(f"ssim: need [C, H, W] with H, W >= {window}, got {x.shape}")
    wx = sliding_window_view(x, (window, window), axis=(1, 2))
    wy = sliding_window_view(y, (window, window), axis=(1, 2))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    vx = wx.var(axis=(-2, -1))
    vy = wy.var(axis=(-2, -1))
    cov = (wx * wy).mean(axis=(-2, -1)) - mx * my
    num = (2 * mx * my + C1) * (2 * cov + C2)
    den = (mx**2 + my**2 + C1) * (vx + vy + C2)
    return float(np.mean(num / den))


def quality_filter(
    records: Sequence[SampleRecord],
    images: Mapping[str, tuple[np.ndarray, np.ndarray]],
    ssim_threshold: float,
) -> list[SampleRecord]:
    """Keep records whose edited image scores SSIM >= threshold against its source.

    ``images`` maps record id to ``(source_image, final_image)``.
    """
    if not 0.0 <= ssim_threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {ssim_threshold}")
    kept = []
    for r in records:
        if r.id not in images:
            raise KeyError(f"no images supplied for record {r.id!r}")
        src, final = images[r.id]
        if ssim(src, final) >= ssim_threshold:
            kept.append(r)
    return kept
