"""SAM training loop, learning-rate schedule and resumable checkpoints."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .checkpoint import load_model, save_model
from .dataset.samples import Sample
from .metrics import MetricsReport, evaluate
from .model import FaithModel, training_loss_batch
from .numerics import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    warmup_epochs: int = 2
    decay_interval: int = 5
    decay_factor: float = 0.1
    lr_transformer: float = 1e-3
    lr_backbone: float = 1e-4
    batch_size: int = 40
    rho: float = 0.05
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if self.lr_transformer <= 0 or self.lr_backbone <= 0:
            raise ValueError("learning rates must be positive")
        if self.decay_interval < 1:
            raise ValueError("decay_interval must be >= 1")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=170, warmup_epochs=20, decay_interval=50)
        base.update(overrides)
        return cls(**base)


def lr_at(config: TrainConfig, epoch: int) -> tuple[float, float]:
    """(transformer lr, backbone lr): linear warmup, then step decay."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        f = (epoch + 1) / config.warmup_epochs
    else:
        f = config.decay_factor ** ((epoch - config.warmup_epochs) // config.decay_interval)
    return config.lr_transformer * f, config.lr_backbone * f


# ---------------------------------------------------------------- optimizers

ParamGroup = tuple[Sequence[Tensor], float]


class SGD:
    def step(self, groups: Sequence[ParamGroup]) -> None:
        for params, lr in groups:
            for p in params:
                if p.grad is not None:
                    p.data = p.data - lr * p.grad.data

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, state: dict[str, np.ndarray], meta: dict) -> None:
        pass

    def meta(self) -> dict:
        return {}


class Adam:
    """Adam applied to the SAM gradient (optional descent rule)."""

    def __init__(self, names: Sequence[str], beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = list(names)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._key: dict[int, str] = {}

    def bind(self, params: dict[str, Tensor]) -> None:
        self._key = {id(p): n for n, p in params.items()}

    def step(self, groups: Sequence[ParamGroup]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for params, lr in groups:
            for p in params:
                if p.grad is None:
                    continue
                k = self._key[id(p)]
                g = p.grad.data
                m = self.m.get(k, np.zeros_like(g))
                v = self.v.get(k, np.zeros_like(g))
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self.m[k], self.v[k] = m, v
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"opt/m/{k}": v for k, v in self.m.items()}
        out.update({f"opt/v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], meta: dict) -> None:
        self.t = int(meta.get("t", 0))
        self.m = {k[len("opt/m/"):]: v for k, v in tensors.items() if k.startswith("opt/m/")}
        self.v = {k[len("opt/v/"):]: v for k, v in tensors.items() if k.startswith("opt/v/")}

    def meta(self) -> dict:
        return {"t": self.t}


def sam_step(
    groups: Sequence[ParamGroup],
    loss_fn: Callable[[], Tensor],
    rho: float,
    optimizer=None,
) -> float:
    """One sharpness-aware update; returns the loss at the starting point.

    The ascent direction is normalised by the global gradient norm over all
    groups. A zero gradient skips the ascent and falls back to plain descent.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    optimizer = optimizer or SGD()
    params = [p for ps, _ in groups for p in ps]
    nx.zero_grad(params)
    loss = loss_fn()
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value}")
    nx.backward(loss)
    grads = [np.zeros(p.shape) if p.grad is None else p.grad.data for p in params]
    sq = sum(float(np.sum(g * g)) for g in grads)
    if not math.isfinite(sq):
        raise TrainingError("non-finite gradient in SAM ascent pass")
    norm = math.sqrt(sq)
    if norm > 0 and rho > 0:
        originals = [p.data for p in params]
        for p, g in zip(params, grads):
            p.data = p.data + (rho / norm) * g
        nx.zero_grad(params)
        nx.backward(loss_fn())
        for p, w in zip(params, originals):
            p.data = w
        for p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad.data)):
                raise TrainingError("non-finite gradient in SAM descent pass")
    optimizer.step(groups)
    nx.zero_grad(params)
    return value


# ---------------------------------------------------------------- data handling

def stratified_batches(samples: Sequence[Sample], batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle within each length, deal round-robin over lengths 0..4, then chunk."""
    buckets: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        buckets.setdefault(len(s.sequence), []).append(i)
    queues = []
    for k in sorted(buckets):
        idx = np.array(buckets[k])
        queues.append(list(idx[rng.permutation(len(idx))]))
    order: list[int] = []
    while any(queues):
        for q in queues:
            if q:
                order.append(int(q.pop(0)))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def param_groups(model: FaithModel, lr_t: float, lr_b: float) -> list[ParamGroup]:
    back = [p for n, p in model.params.items() if n.startswith("backbone.")]
    rest = [p for n, p in model.params.items() if not n.startswith("backbone.")]
    return [(rest, lr_t), (back, lr_b)]


@dataclass
class TrainResult:
    model: FaithModel
    best_model: FaithModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_full: float | None = None


def _make_optimizer(config: TrainConfig, model: FaithModel):
    if config.optimizer == "adam":
        opt = Adam(list(model.params))
        opt.bind(model.params)
        return opt
    return SGD()


def _copy_model(model: FaithModel) -> FaithModel:
    clone = FaithModel(model.config)
    for n, p in model.params.items():
        clone.params[n].data = p.data.copy()
    return clone


def save_training_state(path, model, config, optimizer, epoch, rng, best_epoch, best_val_full, history):
    save_model(
        path,
        model,
        extra={
            "train_config": asdict(config),
            "epoch": epoch,
            "rng_state": rng.bit_generator.state,
            "optimizer": optimizer.meta(),
            "best_epoch": best_epoch,
            "best_val_full": best_val_full,
            "history": history,
        },
        extra_tensors=optimizer.state(),
    )


def train(
    model: FaithModel,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    config: TrainConfig,
    out_dir=None,
    resume_from=None,
    stop_after: int | None = None,
    threads: int = 1,
) -> TrainResult:
    """Run SAM training; writes ``train_log.jsonl``, ``last.ckpt`` and ``best.ckpt`` into ``out_dir``.

    ``resume_from`` continues a run from its ``last.ckpt`` (``model`` is then
    ignored and may be None); ``stop_after``
    ends after that many epochs (used to exercise resumption).
    """
    if not train_samples:
        raise TrainingError("training split is empty")
    rng = np.random.default_rng(config.seed)
    start = 0
    history: list[dict] = []
    best_epoch, best_val = -1, None
    if resume_from is None:
        optimizer = _make_optimizer(config, model)
    else:
        model, header, tensors = load_model(resume_from)
        optimizer = _make_optimizer(config, model)
        optimizer.load_state(tensors, header.get("optimizer", {}))
        rng.bit_generator.state = header["rng_state"]
        start = header["epoch"] + 1
        history = header.get("history", [])
        best_epoch, best_val = header.get("best_epoch", -1), header.get("best_val_full")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    best_model = _copy_model(model)
    if out is not None and resume_from is not None and (out / "best.ckpt").is_file():
        best_model = load_model(out / "best.ckpt")[0]

    images = np.stack([s.image for s in train_samples])
    for epoch in range(start, config.epochs):
        lr_t, lr_b = lr_at(config, epoch)
        losses = []
        for b, batch in enumerate(stratified_batches(train_samples, config.batch_size, rng)):
            imgs = images[batch]
            gts = [train_samples[i].sequence for i in batch]
            try:
                loss = sam_step(
                    param_groups(model, lr_t, lr_b),
                    lambda: training_loss_batch(model, imgs, gts),
                    config.rho,
                    optimizer,
                )
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from None
            losses.append(loss)
        entry = {
            "epoch": epoch,
            "lr_transformer": lr_t,
            "lr_backbone": lr_b,
            "train_loss": float(np.mean(losses)),
        }
        if val_samples:
            rep = evaluate(model, [(s.image, s.sequence) for s in val_samples], label="val", threads=threads)
            entry.update(
                val_fixed=rep.average["fixed"],
                val_adaptive=rep.average["adaptive"],
                val_full=rep.average["full"],
            )
        history.append(entry)
        log.info("epoch %d loss %.5f val_full %s", epoch, entry["train_loss"], entry.get("val_full"))
        # without a validation split the lowest training loss stands in
        score = entry.get("val_full", -entry["train_loss"])
        if best_val is None or score > best_val:
            best_val, best_epoch = score, epoch
            best_model = _copy_model(model)
            if out is not None:
                save_model(out / "best.ckpt", model, extra={"epoch": epoch, "val_full": score})
        if out is not None:
            with open(out / "train_log.jsonl", "a" if epoch > 0 else "w", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            save_training_state(
                out / "last.ckpt", model, config, optimizer, epoch, rng, best_epoch, best_val, history
            )
        if stop_after is not None and epoch + 1 - start >= stop_after:
            break
    return TrainResult(model=model, best_model=best_model, history=history,
                       best_epoch=best_epoch, best_val_full=best_val)
