"""Haar DWT, orthonormal DCT-II and FFT high-pass maps.

All functions take plain ``[C, H, W]`` or batched ``[N, C, H, W]`` float64
arrays and transform the last two axes. The maps feed the frequency branch
as fixed inputs, so nothing here is differentiated.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import fft as sfft


class FrequencyError(ValueError):
    pass


@dataclass(frozen=True)
class Subbands:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {b.shape for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise FrequencyError(f"sub-band shapes differ: {sorted(shapes)}")


class Method(str, Enum):
    DWT = "dwt"
    DCT = "dct"
    FFT = "fft"


@dataclass(frozen=True)
class FrequencyMethod:
    """Transform choice plus its cutoff.

    ``dct_block`` is the side of the zeroed low-frequency corner (``None`` means
    H/8); ``fft_radius`` is the cut radius as a fraction of Nyquist.
    """

    kind: Method = Method.DWT
    dct_block: int | None = None
    fft_radius: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "kind", Method(self.kind))
        if not 0.0 < self.fft_radius < 1.0:
            raise FrequencyError(f"fft_radius must lie in (0, 1), got {self.fft_radius}")
        if self.dct_block is not None and self.dct_block <= 0:
            raise FrequencyError(f"dct_block must be positive, got {self.dct_block}")

    def block_for(self, h: int, w: int) -> int:
        b = self.dct_block if self.dct_block is not None else max(1, h // 8)
        if not 0 < b < min(h, w):
            raise FrequencyError(f"dct block {b} must lie in (0, {min(h, w)})")
        return b


def _as_chw(image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim not in (3, 4) or min(x.shape) <= 0:
        raise FrequencyError(f"expected a [C, H, W] or [N, C, H, W] image, got shape {x.shape}")
    return x


def dwt_haar(image) -> Subbands:
    """Single-level orthonormal Haar analysis of each channel."""
    x = _as_chw(image)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise FrequencyError(f"Haar DWT needs even spatial dims, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return Subbands(
        ll=(a + b + c + d) / 2,
        lh=(a + b - c - d) / 2,
        hl=(a - b + c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def idwt_haar(bands: Subbands) -> np.ndarray:
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    if not ll.shape == lh.shape == hl.shape == hh.shape:
        raise FrequencyError("sub-band shapes differ")
    h, w = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h, 2 * w))
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def dct2(image) -> np.ndarray:
    """Orthonormal type-II 2-D DCT per channel."""
    return sfft.dctn(_as_chw(image), type=2, norm="ortho", axes=(-2, -1))


def idct2(coeffs) -> np.ndarray:
    return sfft.idctn(_as_chw(coeffs), type=2, norm="ortho", axes=(-2, -1))


def _radial_mask(h: int, w: int, r: float) -> np.ndarray:
    # distance in cycles/sample; Nyquist radius is 0.5
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.sqrt(fy**2 + fx**2) >= r * 0.5


def fft2_magnitude_highpass(image, r: float) -> np.ndarray:
    """Zero every bin closer than ``r * Nyquist`` to DC and return the real residual."""
    if not 0.0 < r < 1.0:
        raise FrequencyError(f"cut radius must lie in (0, 1), got {r}")
    x = _as_chw(image)
    spec = np.fft.fft2(x, axes=(-2, -1))
    spec *= _radial_mask(x.shape[-2], x.shape[-1], r)
    return np.fft.ifft2(spec, axes=(-2, -1)).real


def dct_highpass(image, block: int) -> np.ndarray:
    coeffs = dct2(image)
    coeffs[..., :block, :block] = 0.0
    return idct2(coeffs)


def extract_frequency_map(image, method: FrequencyMethod | None = None) -> np.ndarray:
    """High-frequency evidence map in the spatial domain.

    DWT gives the HH band at half resolution; DCT and FFT give full-resolution
    high-pass residuals.
    """
    method = method or FrequencyMethod()
    x = _as_chw(image)
    if method.kind is Method.DWT:
        return dwt_haar(x).hh
    if method.kind is Method.DCT:
        return dct_highpass(x, method.block_for(x.shape[-2], x.shape[-1]))
    return fft2_magnitude_highpass(x, method.fft_radius)


def map_downscale(method: FrequencyMethod) -> int:
    """Spatial reduction factor of :func:`extract_frequency_map` for ``method``."""
    return 2 if method.kind is Method.DWT else 1
