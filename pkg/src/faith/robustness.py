"""Post-processing perturbations (lossy JPEG stage, Gaussian noise) and the sweep over them."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn

from .metrics import MetricsReport, evaluate

# ITU-T T.81 Annex K example tables
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)

# JFIF full-range YCbCr
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


class PerturbationError(ValueError):
    pass


def quality_for_ratio(ratio: float) -> float:
    return 100.0 - float(ratio)


def scaled_table(table: np.ndarray, quality: float) -> np.ndarray:
    """Quality-factor scaling as in the IJG reference codec, clamped to [1, 255]."""
    if not 0 < quality <= 100:
        raise PerturbationError(f"quality must be in (0, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((table * scale + 50.0) / 100.0), 1.0, 255.0)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def jpeg_like_compress(image: np.ndarray, ratio: float) -> np.ndarray:
    """Lossy stage of baseline JPEG (4:4:4, no entropy coding) at quality ``100 - ratio``."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise PerturbationError(f"expected a [3, H, W] image, got {x.shape}")
    if x.shape[1] % 8 or x.shape[2] % 8:
        raise PerturbationError(f"image {x.shape[1]}x{x.shape[2]} is not a multiple of 8")
    if not 0 < ratio < 100:
        raise PerturbationError(f"compression ratio must be in (0, 100), got {ratio}")
    q = quality_for_ratio(ratio)
    tables = (scaled_table(LUMA_TABLE, q), scaled_table(CHROMA_TABLE, q), scaled_table(CHROMA_TABLE, q))

    ycc = np.einsum("ij,jhw->ihw", _RGB_TO_YCC, x * 255.0)
    ycc[0] -= 128.0  # level shift; chroma is already centred
    out = np.empty_like(ycc)
    for c in range(3):
        coef = dctn(_blocks(ycc[c]), type=2, axes=(-2, -1), norm="ortho")
        coef = np.round(coef / tables[c]) * tables[c]
        out[c] = _unblocks(idctn(coef, type=2, axes=(-2, -1), norm="ortho"))
    out[0] += 128.0
    rgb = np.einsum("ij,jhw->ihw", _YCC_TO_RGB, out) / 255.0
    return np.clip(rgb, 0.0, 1.0)


def gaussian_noise(image: np.ndarray, intensity: float, seed) -> np.ndarray:
    """Additive N(0, (intensity/100)^2) noise, clamped to [0, 1]."""
    if not 0 < intensity < 100:
        raise PerturbationError(f"noise intensity must be in (0, 100), got {intensity}")
    x = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return np.clip(x + rng.normal(0.0, intensity / 100.0, size=x.shape), 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


class Kind(str, Enum):
    IDENTITY = "identity"
    JPEG = "jpeg_like"
    NOISE = "gaussian_noise"


@dataclass(frozen=True)
class Perturbation:
    kind: Kind
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is not Kind.IDENTITY and not 0 < self.level < 100:
            raise PerturbationError(f"{self.kind.value} level must be in (0, 100), got {self.level}")

    @property
    def descriptor(self) -> str:
        """Short tag used in report labels and filenames, e.g. ``jpeg75`` or ``noise10``."""
        if self.kind is Kind.IDENTITY:
            return "clean"
        tag = "jpeg" if self.kind is Kind.JPEG else "noise"
        return f"{tag}{self.level:g}"

    def apply(self, image: np.ndarray, index: int = 0) -> np.ndarray:
        if self.kind is Kind.JPEG:
            return jpeg_like_compress(image, self.level)
        if self.kind is Kind.NOISE:
            return gaussian_noise(image, self.level, [self.seed, index])
        return np.asarray(image, dtype=np.float64)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "Perturbation":
        """``clean``, ``jpeg:75`` or ``noise:10``."""
        name, _, level = text.partition(":")
        kinds = {"clean": Kind.IDENTITY, "identity": Kind.IDENTITY, "jpeg": Kind.JPEG,
                 "jpeg_like": Kind.JPEG, "noise": Kind.NOISE, "gaussian_noise": Kind.NOISE}
        if name not in kinds:
            raise PerturbationError(f"unknown perturbation {text!r}")
        try:
            value = float(level) if level else 0.0
        except ValueError:
            raise PerturbationError(f"bad perturbation level in {text!r}") from None
        return cls(kinds[name], value, seed)


TABLE3 = (
    Perturbation(Kind.JPEG, 25),
    Perturbation(Kind.JPEG, 50),
    Perturbation(Kind.JPEG, 75),
    Perturbation(Kind.NOISE, 10),
    Perturbation(Kind.NOISE, 15),
    Perturbation(Kind.NOISE, 20),
)


def robustness_sweep(
    model,
    samples: Sequence[tuple[np.ndarray, Sequence]],
    perturbations: Sequence[Perturbation],
    batch_size: int = 64,
    threads: int = 1,
) -> list[MetricsReport]:
    """One report per perturbation, in input order; noise is seeded per sample index."""
    if not samples:
        raise PerturbationError("cannot sweep an empty split")
    reports = []
    for p in perturbations:
        perturbed = [(p.apply(img, i), gt) for i, (img, gt) in enumerate(samples)]
        reports.append(evaluate(model, perturbed, label=p.descriptor, batch_size=batch_size, threads=threads))
    return reports
