"""Procedural stand-in for SEED: cartoon faces with sequential localized edits.

Each edit shifts the colour of one attribute region and overlays a
pixel-scale checker texture, then the whole image is lightly smoothed (the
"regeneration" pass). Smoothing scales the checker amplitude by
``1 - smoothing`` every step, so the texture left in a region tells how many
edits came after it; the colour shift says which regions were edited at all.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..model import ATTRIBUTES, Attribute
from .images import save_image, save_mask
from .manifest import EditMethod, EditStep, SampleRecord, Source, write_manifest
from .quality import ssim

MANIFEST_NAME = "manifest.jsonl"

# centre (x, y) and radii (rx, ry) in unit canvas coordinates
_FACE = ((0.5, 0.56), (0.30, 0.36))
_REGIONS: dict[Attribute, list[tuple[tuple[float, float], tuple[float, float]]]] = {
    Attribute.HAT: [((0.5, 0.09), (0.30, 0.07))],
    Attribute.HAIR: [((0.5, 0.24), (0.34, 0.07))],
    Attribute.EYEBROWS: [((0.35, 0.38), (0.09, 0.035)), ((0.65, 0.38), (0.09, 0.035))],
    Attribute.EYES: [((0.35, 0.48), (0.07, 0.04)), ((0.65, 0.48), (0.07, 0.04))],
    Attribute.GLASSES: [
        ((0.5, 0.47), (0.05, 0.03)),
        ((0.20, 0.47), (0.04, 0.03)),
        ((0.80, 0.47), (0.04, 0.03)),
    ],
    Attribute.LIPS: [((0.5, 0.76), (0.12, 0.045))],
}

_VERBS = {
    Attribute.EYES: "change the eye colour",
    Attribute.LIPS: "repaint the lips",
    Attribute.HAIR: "restyle the hair",
    Attribute.EYEBROWS: "thicken the eyebrows",
    Attribute.GLASSES: "add glasses",
    Attribute.HAT: "add a hat",
}


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    strength: float = 1.0  # scales colour shift and texture amplitude
    shift: float = 0.18
    texture: float = 0.3
    smoothing: float = 0.3
    jitter: int = 2
    mask_margin: int = 2


def _ellipse(size: int, centre, radii, offset) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cx = centre[0] * size + offset[0]
    cy = centre[1] * size + offset[1]
    return ((xx - cx) / (radii[0] * size)) ** 2 + ((yy - cy) / (radii[1] * size)) ** 2 <= 1.0


def region_mask(attr: Attribute, size: int, offset=(0, 0)) -> np.ndarray:
    m = np.zeros((size, size), dtype=bool)
    for centre, radii in _REGIONS[attr]:
        m |= _ellipse(size, centre, radii, offset)
    return m


def smooth(image: np.ndarray, alpha: float) -> np.ndarray:
    """Blend towards a 3x3 binomial blur; pixel-scale checkers shrink by (1 - alpha)."""
    k = np.array([1.0, 2.0, 1.0]) / 4.0
    blurred = ndimage.correlate1d(image, k, axis=-1, mode="nearest")
    blurred = ndimage.correlate1d(blurred, k, axis=-2, mode="nearest")
    return (1.0 - alpha) * image + alpha * blurred


def render_face(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, tuple[int, int]]:
    """A smooth base portrait and the integer offset applied to every region."""
    s = cfg.size
    offset = tuple(int(v) for v in rng.integers(-cfg.jitter, cfg.jitter + 1, size=2))
    yy = np.linspace(0.0, 1.0, s)[:, None]
    bg_a, bg_b = rng.uniform(0.35, 0.65, 3), rng.uniform(0.35, 0.65, 3)
    img = np.stack([np.broadcast_to(bg_a[c] + (bg_b[c] - bg_a[c]) * yy, (s, s)) for c in range(3)])
    img = img.copy()
    skin = rng.uniform(0.45, 0.65, 3)
    face = _ellipse(s, _FACE[0], _FACE[1], offset)
    img[:, face] = skin[:, None]
    for attr in ATTRIBUTES:
        if attr in (Attribute.GLASSES, Attribute.HAT):
            continue  # accessories only appear through edits
        tone = np.clip(skin + rng.uniform(-0.12, 0.12, 3), 0.35, 0.65)
        img[:, region_mask(attr, s, offset)] = tone[:, None]
    img = ndimage.gaussian_filter(img, sigma=(0, 1.2, 1.2), mode="nearest")
    return img, offset


def checker(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.where((yy + xx) % 2 == 0, 1.0, -1.0)


def apply_edit(
    img: np.ndarray, attr: Attribute, offset, rng: np.random.Generator, cfg: SynthConfig
) -> np.ndarray:
    m = region_mask(attr, cfg.size, offset)
    # shift towards mid-grey so the texture on top never clips
    sign = np.sign(0.5 - img[:, m].mean(axis=1))
    sign[sign == 0] = 1.0
    shift = cfg.shift * cfg.strength * sign * rng.uniform(0.6, 1.0, size=3)
    tex = cfg.texture * cfg.strength * checker(cfg.size)
    out = img.copy()
    out[:, m] += shift[:, None] + tex[m][None, :]
    out = np.clip(out, 0.0, 1.0)
    return smooth(out, cfg.smoothing)


def sample_sequence(
    rng: np.random.Generator,
    weights: Sequence[float],
    whitelist: Sequence[Sequence[Attribute]] | None = None,
) -> list[Attribute]:
    w = np.asarray(weights, dtype=np.float64)
    k = int(rng.choice(len(w), p=w / w.sum()))
    if whitelist is not None:
        pool = [list(s) for s in whitelist if len(s) == k]
        if not pool:
            raise ValueError(f"whitelist has no sequence of length {k}")
        return [Attribute(a) for a in pool[int(rng.integers(len(pool)))]]
    idx = rng.permutation(len(ATTRIBUTES))[:k]
    return [ATTRIBUTES[i] for i in idx]


@dataclass
class SyntheticSample:
    base: np.ndarray
    image: np.ndarray
    sequence: list[Attribute]
    masks: list[np.ndarray]
    offset: tuple[int, int] = (0, 0)


def make_sample(
    seed: int,
    index: int,
    weights: Sequence[float],
    cfg: SynthConfig = SynthConfig(),
    whitelist=None,
) -> SyntheticSample:
    """Deterministic sample ``index`` of the stream defined by ``seed``."""
    rng = np.random.default_rng([seed, index])
    base, offset = render_face(rng, cfg)
    seq = sample_sequence(rng, weights, whitelist)
    img = base
    masks = []
    for attr in seq:
        img = apply_edit(img, attr, offset, rng, cfg)
        m = region_mask(attr, cfg.size, offset)
        if cfg.mask_margin:
            m = ndimage.binary_dilation(m, iterations=cfg.mask_margin)
        masks.append(m)
    return SyntheticSample(base=base, image=img, sequence=seq, masks=masks, offset=offset)


def synth_generate(
    count: int,
    length_weights: Sequence[float],
    seed: int,
    out_dir,
    cfg: SynthConfig = SynthConfig(),
    whitelist: Sequence[Sequence[Attribute]] | None = None,
) -> list[SampleRecord]:
    """Render ``count`` samples plus masks into ``out_dir`` and write the manifest."""
    if count <= 0:
        raise ValueError("count must be positive")
    w = np.asarray(length_weights, dtype=np.float64)
    if w.shape != (5,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("length_weights must be 5 non-negative numbers, not all zero")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory not writable: {out}")
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    width = max(5, len(str(count - 1)))
    records = []
    for i in range(count):
        sid = f"syn{i:0{width}d}"
        s = make_sample(seed, i, w, cfg, whitelist)
        img_rel = f"images/{sid}.png"
        src_rel = f"images/{sid}_src.png"
        save_image(s.image, out / img_rel)
        save_image(s.base, out / src_rel)
        steps = []
        for j, (attr, m) in enumerate(zip(s.sequence, s.masks)):
            mask_rel = f"masks/{sid}_{j}.png"
            save_mask(m, out / mask_rel)
            steps.append(EditStep(attr, EditMethod.SYNTHETIC, _VERBS[attr], mask_rel))
        score = round(float(ssim(s.base, s.image)), 6)
        records.append(
            SampleRecord(
                id=sid, image=img_rel, source=Source.SYNTHETIC, steps=steps,
                source_image=src_rel, ssim=score,
            )
        )
    write_manifest(records, out / MANIFEST_NAME)
    return records
