"""In-memory training/evaluation samples loaded from a manifest."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .images import load_image
from .manifest import SampleRecord


@dataclass
class Sample:
    id: str
    image: np.ndarray
    sequence: list


def load_samples(records: Sequence[SampleRecord], root) -> list[Sample]:
    root = Path(root)
    return [Sample(r.id, load_image(root / r.image), r.sequence) for r in records]
