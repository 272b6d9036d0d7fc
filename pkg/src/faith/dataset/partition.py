"""Sequence-length-balanced train/val/test partition."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .manifest import MAX_STEPS, SampleRecord, by_length

SPLITS = ("train", "val", "test")


class PartitionError(ValueError):
    pass


def balanced_partition(
    records: Sequence[SampleRecord],
    per_length: int,
    ratios: Sequence[int] = (8, 1, 1),
    seed: int = 0,
) -> dict[str, str]:
    """Pick ``per_length`` ids for each length 0..4 and split each bucket by ``ratios``.

    Val and test get ``floor(per_length * r / sum(ratios))``; train takes the rest.
    Returns ``{id: "train" | "val" | "test"}`` in manifest order.
    """
    if per_length <= 0:
        raise PartitionError("per_length must be positive")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise PartitionError(f"ratios must be three non-negative numbers, got {ratios}")
    buckets = by_length(records)
    short = [
        f"length {k}: need {per_length}, have {len(buckets[k])}"
        for k in range(MAX_STEPS + 1)
        if len(buckets[k]) < per_length
    ]
    if short:
        raise PartitionError("; ".join(short))
    total = sum(ratios)
    n_val = per_length * ratios[1] // total
    n_test = per_length * ratios[2] // total
    n_train = per_length - n_val - n_test
    rng = np.random.default_rng(seed)
    chosen: dict[str, str] = {}
    for k in range(MAX_STEPS + 1):
        pick = rng.permutation(len(buckets[k]))[:per_length]
        ids = [buckets[k][i].id for i in pick]
        for i, sid in enumerate(ids):
            chosen[sid] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    return {r.id: chosen[r.id] for r in records if r.id in chosen}


def split_records(records: Sequence[SampleRecord], assignment: dict[str, str], split: str) -> list[SampleRecord]:
    return [r for r in records if assignment.get(r.id) == split]


def write_splits(assignment: dict[str, str], path) -> None:
    Path(path).write_text(json.dumps(assignment, indent=1) + "\n", encoding="utf-8")


def read_splits(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"split file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    bad = {v for v in data.values() if v not in SPLITS}
    if bad:
        raise PartitionError(f"unknown split names {sorted(bad)}")
    return data
