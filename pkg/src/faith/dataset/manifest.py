"""SEED-style annotation manifest: one JSON object per line.

Line grammar (keys always in this order, UTF-8, no trailing spaces)::

    {"id": str, "image": path, "source_image": path|null,
     "source": "FFHQ"|"CelebAMaskHQ"|"Synthetic", "ssim": float|null,
     "dino": float|null, "clip": float|null, "num_steps": 0..4,
     "steps": [{"attribute": str, "method": str, "prompt": str, "mask": path|null}, ...]}

Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from ..model import Attribute

MAX_STEPS = 4


class ManifestError(ValueError):
    pass


class EditMethod(str, Enum):
    LEDITS = "LEdits"
    SDXL = "SDXL"
    SD3_ULTRAEDIT = "SD3_UltraEdit"
    SYNTHETIC = "Synthetic"


class Source(str, Enum):
    FFHQ = "FFHQ"
    CELEBA_MASK_HQ = "CelebAMaskHQ"
    SYNTHETIC = "Synthetic"


@dataclass
class EditStep:
    attribute: Attribute
    method: EditMethod
    prompt: str
    mask: str | None = None

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute.value,
            "method": self.method.value,
            "prompt": self.prompt,
            "mask": self.mask,
        }


@dataclass
class SampleRecord:
    id: str
    image: str
    source: Source
    steps: list[EditStep] = field(default_factory=list)
    source_image: str | None = None
    ssim: float | None = None
    dino: float | None = None
    clip: float | None = None

    @property
    def sequence(self) -> list[Attribute]:
        return [s.attribute for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "source_image": self.source_image,
            "source": self.source.value,
            "ssim": self.ssim,
            "dino": self.dino,
            "clip": self.clip,
            "num_steps": len(self.steps),
            "steps": [s.to_dict() for s in self.steps],
        }

    def validate(self) -> None:
        if not self.id:
            raise ManifestError("record with empty id")
        if len(self.steps) > MAX_STEPS:
            raise ManifestError(f"record {self.id!r}: {len(self.steps)} steps exceeds {MAX_STEPS}")
        attrs = [s.attribute for s in self.steps]
        if len(set(attrs)) != len(attrs):
            raise ManifestError(f"record {self.id!r}: repeated attribute in {[a.value for a in attrs]}")
        for s in self.steps:
            if not s.prompt:
                raise ManifestError(f"record {self.id!r}: empty prompt")
        for name in ("ssim", "dino", "clip"):
            v = getattr(self, name)
            if v is not None and not -1.0 <= v <= 1.0:
                raise ManifestError(f"record {self.id!r}: {name}={v} outside [-1, 1]")


def _enum(kind, value, what: str, lineno: int):
    try:
        return kind(value)
    except ValueError:
        raise ManifestError(f"line {lineno}: unknown {what} {value!r}") from None


def parse_record(line: str, lineno: int = 1) -> SampleRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestError(f"line {lineno}: malformed record ({e.msg})") from None
    if not isinstance(raw, dict):
        raise ManifestError(f"line {lineno}: record must be an object")
    try:
        steps_raw = raw["steps"]
        if not isinstance(steps_raw, list):
            raise ManifestError(f"line {lineno}: steps must be a list")
        steps = [
            EditStep(
                attribute=_enum(Attribute, s["attribute"], "attribute", lineno),
                method=_enum(EditMethod, s["method"], "method", lineno),
                prompt=s["prompt"],
                mask=s.get("mask"),
            )
            for s in steps_raw
        ]
        rec = SampleRecord(
            id=str(raw["id"]),
            image=raw["image"],
            source=_enum(Source, raw["source"], "source", lineno),
            steps=steps,
            source_image=raw.get("source_image"),
            ssim=raw.get("ssim"),
            dino=raw.get("dino"),
            clip=raw.get("clip"),
        )
    except (KeyError, TypeError) as e:
        raise ManifestError(f"line {lineno}: missing or invalid field {e}") from None
    if raw.get("num_steps", len(steps)) != len(steps):
        raise ManifestError(
            f"line {lineno}: num_steps={raw['num_steps']} but {len(steps)} steps listed"
        )
    try:
        rec.validate()
    except ManifestError as e:
        raise ManifestError(f"line {lineno}: {e}") from None
    return rec


def format_record(rec: SampleRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False, separators=(", ", ": "))


def parse_manifest(text: str) -> list[SampleRecord]:
    records: list[SampleRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rec = parse_record(line, lineno)
        if rec.id in seen:
            raise ManifestError(f"duplicate id {rec.id!r} on lines {seen[rec.id]} and {lineno}")
        seen[rec.id] = lineno
        records.append(rec)
    return records


def load_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(encoding="utf-8"))


def write_manifest(records: Iterable[SampleRecord], path) -> None:
    records = list(records)
    ids = [r.id for r in records]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ManifestError(f"duplicate ids: {dupes}")
    for r in records:
        r.validate()
    text = "".join(format_record(r) + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


def canonicalize(text: str) -> str:
    """Re-emit a manifest in canonical form (key order, spacing, trailing newline)."""
    return "".join(format_record(r) + "\n" for r in parse_manifest(text))


def by_length(records: Sequence[SampleRecord]) -> dict[int, list[SampleRecord]]:
    out: dict[int, list[SampleRecord]] = {k: [] for k in range(MAX_STEPS + 1)}
    for r in records:
        out[len(r.steps)].append(r)
    return out
