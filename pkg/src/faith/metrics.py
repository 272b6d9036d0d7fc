"""Fixed / Adaptive / Full accuracy and the per-length report."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_LEN = 4
NO_MANIPULATION = "NM"
METRIC_NAMES = ("fixed", "adaptive", "full")


class MetricError(ValueError):
    pass


def _norm(seq) -> list[str]:
    out = [getattr(a, "value", a) for a in seq]
    if len(out) > MAX_LEN:
        raise MetricError(f"sequence of length {len(out)} exceeds {MAX_LEN}")
    return out


def fixed_acc(pred, gt) -> float:
    """Positional agreement after padding both sequences to 4 with NM."""
    p, g = _norm(pred), _norm(gt)
    p += [NO_MANIPULATION] * (MAX_LEN - len(p))
    g += [NO_MANIPULATION] * (MAX_LEN - len(g))
    return sum(a == b for a, b in zip(p, g)) / MAX_LEN


def adaptive_acc(pred, gt) -> float:
    """Agreement over the shorter sequence; both empty scores 1, one empty scores 0."""
    p, g = _norm(pred), _norm(gt)
    m = min(len(p), len(g))
    if m == 0:
        return 1.0 if not p and not g else 0.0
    return sum(a == b for a, b in zip(p[:m], g[:m])) / m


def full_acc(pred, gt) -> float:
    return 1.0 if _norm(pred) == _norm(gt) else 0.0


@dataclass
class MetricsReport:
    """Per ground-truth length rows (0..4) plus their unweighted mean."""

    rows: dict[int, dict[str, float]]
    counts: dict[int, int]
    average: dict[str, float] = field(default_factory=dict)
    label: str = "clean"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "rows": {str(k): self.rows[k] for k in sorted(self.rows)},
            "counts": {str(k): self.counts[k] for k in sorted(self.counts)},
            "average": self.average,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            rows={int(k): v for k, v in d["rows"].items()},
            counts={int(k): v for k, v in d["counts"].items()},
            average=d["average"],
            label=d.get("label", "clean"),
        )

    def to_text(self) -> str:
        lines = [
            f"# {self.label}",
            f"{'Len':>4}  {'N':>6}  {'Fixed':>7}  {'Adaptive':>8}  {'Full':>7}",
        ]
        for k in sorted(self.rows):
            r = self.rows[k]
            lines.append(
                f"{k:>4}  {self.counts[k]:>6}  {100 * r['fixed']:>7.2f}  "
                f"{100 * r['adaptive']:>8.2f}  {100 * r['full']:>7.2f}"
            )
        a = self.average
        lines.append(
            f"{'Avg.':>4}  {sum(self.counts.values()):>6}  {100 * a['fixed']:>7.2f}  "
            f"{100 * a['adaptive']:>8.2f}  {100 * a['full']:>7.2f}"
        )
        return "\n".join(lines) + "\n"


def _sums(pairs) -> tuple[np.ndarray, np.ndarray]:
    # per length: [fixed, adaptive, full] sums and sample counts
    sums = np.zeros((MAX_LEN + 1, 3))
    counts = np.zeros(MAX_LEN + 1, dtype=np.int64)
    for pred, gt in pairs:
        k = len(gt)
        sums[k] += (fixed_acc(pred, gt), adaptive_acc(pred, gt), full_acc(pred, gt))
        counts[k] += 1
    return sums, counts


def report_from_pairs(pairs: Sequence[tuple], label: str = "clean") -> MetricsReport:
    """Aggregate ``(pred, gt)`` pairs into a report; empty length buckets are skipped."""
    if not pairs:
        raise MetricError("cannot build a report from an empty split")
    sums, counts = _sums(pairs)
    rows = {}
    for k in range(MAX_LEN + 1):
        if counts[k]:
            rows[k] = {m: float(sums[k, j] / counts[k]) for j, m in enumerate(METRIC_NAMES)}
    average = {m: float(np.mean([rows[k][m] for k in rows])) for m in METRIC_NAMES}
    return MetricsReport(rows=rows, counts={k: int(counts[k]) for k in rows}, average=average, label=label)


Predictor = Callable[[np.ndarray], list]


def evaluate(
    predictor,
    samples: Sequence[tuple[np.ndarray, Sequence]],
    label: str = "clean",
    batch_size: int = 64,
    threads: int = 1,
) -> MetricsReport:
    """Run a model (or a batch predictor callable) over ``(image, gt)`` samples.

    ``predictor`` is a :class:`~faith.model.FaithModel` or any callable mapping
    an ``[N, 3, H, W]`` array to N predicted sequences. Batches may run on
    several threads; results are reassembled in sample order.
    """
    if not samples:
        raise MetricError("cannot evaluate an empty split")
    if not callable(predictor):
        from .model import predict_batch

        model = predictor

        def predictor(batch):
            return predict_batch(model, batch)

    chunks = [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]

    def run(chunk):
        return predictor(np.stack([np.asarray(img) for img, _ in chunk]))

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(run, chunks))
    else:
        preds = [run(c) for c in chunks]
    pairs = [(p, gt) for chunk, ps in zip(chunks, preds) for p, (_, gt) in zip(ps, chunk)]
    return report_from_pairs(pairs, label=label)
