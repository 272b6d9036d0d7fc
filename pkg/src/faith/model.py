"""FAITH: CNN backbone, spatial encoder, frequency branch and biased decoder.

Everything is written against :mod:`faith.numerics`. Internally all passes are
batched (``[N, ...]``); the single-image helpers wrap them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .frequency import FrequencyMethod, Method, extract_frequency_map, map_downscale
from .numerics import Tensor


class Attribute(str, Enum):
    EYES = "eyes"
    LIPS = "lips"
    HAIR = "hair"
    EYEBROWS = "eyebrows"
    GLASSES = "glasses"
    HAT = "hat"


ATTRIBUTES: tuple[Attribute, ...] = tuple(Attribute)
EOS = len(ATTRIBUTES)  # 6, also the last output class
SOS = EOS + 1  # 7, input-only
NUM_CLASSES = EOS + 1
NUM_EMBEDDINGS = SOS + 1
MAX_EDITS = 4

EditSequence = list  # list[Attribute]


class ModelError(ValueError):
    pass


def attribute_index(a: Attribute | str) -> int:
    return ATTRIBUTES.index(Attribute(a))


def encode_sequence(seq: Sequence[Attribute | str]) -> list[int]:
    return [attribute_index(a) for a in seq]


def decode_sequence(ids: Sequence[int]) -> list[Attribute]:
    return [ATTRIBUTES[i] for i in ids]


@dataclass
class ModelConfig:
    image_size: int = 64
    backbone_widths: tuple[int, ...] = (16, 32, 64)
    d_model: int = 64
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    mlp_ratio: int = 2
    freq_channels: int = 16
    frequency: FrequencyMethod = field(default_factory=FrequencyMethod)
    use_frequency: bool = True
    pre_norm: bool = False
    learned_positions: bool = False
    cross_residual: bool = False
    max_len: int = MAX_EDITS
    seed: int = 0

    def __post_init__(self):
        self.backbone_widths = tuple(int(w) for w in self.backbone_widths)
        if isinstance(self.frequency, dict):
            self.frequency = FrequencyMethod(**self.frequency)
        if self.d_model % self.heads:
            raise ModelError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.image_size % self.stride:
            raise ModelError(f"image size {self.image_size} not divisible by stride {self.stride}")
        if self.freq_stages < 0 or 2**self.freq_stages * self.grid * map_downscale(
            self.frequency
        ) != self.image_size:
            raise ModelError("frequency map cannot be reduced to the backbone grid")
        if not self.learned_positions and self.backbone_widths[-1] % 4:
            raise ModelError("sinusoidal positions need the last backbone width divisible by 4")

    @property
    def stride(self) -> int:
        return 2 ** len(self.backbone_widths)

    @property
    def grid(self) -> int:
        return self.image_size // self.stride

    @property
    def freq_stages(self) -> int:
        side = self.image_size // map_downscale(self.frequency)
        return int(round(math.log2(side / self.grid))) if side >= self.grid else -1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["backbone_widths"] = list(self.backbone_widths)
        out["frequency"] = {
            "kind": self.frequency.kind.value,
            "dct_block": self.frequency.dct_block,
            "fft_radius": self.frequency.fft_radius,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_table(channels: int, h: int, w: int) -> np.ndarray:
    """Fixed 2-D sine/cosine table, ``[channels, h, w]``; half the channels encode y."""
    quarter = channels // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / quarter))
    ys = np.arange(h)[:, None] * freqs[None, :]  # h, q
    xs = np.arange(w)[:, None] * freqs[None, :]  # w, q
    out = np.zeros((channels, h, w))
    out[0:quarter] = np.sin(ys).T[:, :, None]
    out[quarter : 2 * quarter] = np.cos(ys).T[:, :, None]
    out[2 * quarter : 3 * quarter] = np.sin(xs).T[:, None, :]
    out[3 * quarter : 4 * quarter] = np.cos(xs).T[:, None, :]
    return out


class FaithModel:
    """Parameters plus config. ``params`` maps stable names to leaf tensors."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(self.config.seed))
        cfg = self.config
        self.pos_table = sinusoidal_table(cfg.backbone_widths[-1], cfg.grid, cfg.grid)

    # ------------------------------------------------------------ parameters
    def _new(self, name: str, shape, rng, std: float | None = None, value: float | None = None):
        if value is not None:
            data = np.full(shape, value)
        else:
            data = rng.normal(0.0, std, size=shape)
        self.params[name] = Tensor(data, requires_grad=True)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        d, hid = cfg.d_model, cfg.d_model * cfg.mlp_ratio
        c_in = 3
        for i, c in enumerate(cfg.backbone_widths):
            self._new(f"backbone.{i}.weight", (c, c_in, 3, 3), rng, math.sqrt(2.0 / (c_in * 9)))
            self._new(f"backbone.{i}.bias", (c,), rng, value=0.0)
            c_in = c
        c_top = cfg.backbone_widths[-1]
        if cfg.learned_positions:
            self._new("encoder.pos", (c_top, cfg.grid, cfg.grid), rng, 0.1)
        self._new("encoder.spa.weight", (c_top, d), rng, 1 / math.sqrt(c_top))
        self._new("encoder.spa.bias", (d,), rng, value=0.0)
        self._new("encoder.val.weight", (c_top, d), rng, 1 / math.sqrt(c_top))
        self._new("encoder.val.bias", (d,), rng, value=0.0)
        for i in range(cfg.encoder_layers):
            self._attention_params(f"encoder.{i}.attn", rng)
            self._mlp_params(f"encoder.{i}.mlp", d, hid, d, rng)
            self._norm_params(f"encoder.{i}", ("norm_attn", "norm_mlp"))

        c_in = 3
        for i in range(cfg.freq_stages):
            self._new(f"freq.{i}.weight", (cfg.freq_channels, c_in, 3, 3), rng,
                      math.sqrt(2.0 / (c_in * 9)))
            self._new(f"freq.{i}.bias", (cfg.freq_channels,), rng, value=0.0)
            c_in = cfg.freq_channels
        self.freq_out_channels = c_in
        self._new("freq.mf.weight", (1, c_in, 1, 1), rng, 1 / math.sqrt(c_in))
        self._new("freq.mf.bias", (1,), rng, value=0.0)

        self._new("decoder.embed", (NUM_EMBEDDINGS, d), rng, 1.0)
        self._new("decoder.pos", (cfg.max_len + 1, d), rng, 0.1)
        for i in range(cfg.decoder_layers):
            self._attention_params(f"decoder.{i}.self", rng)
            self._attention_params(f"decoder.{i}.cross", rng)
            self._mlp_params(f"decoder.{i}.mlp", d, hid, d, rng)
            self._norm_params(f"decoder.{i}", ("norm_self", "norm_cross", "norm_mlp"))
        self._mlp_params("head", d, d, NUM_CLASSES, rng)

    def _attention_params(self, prefix: str, rng) -> None:
        d = self.config.d_model
        for m in ("q", "k", "v", "o"):
            self._new(f"{prefix}.w{m}", (d, d), rng, 1 / math.sqrt(d))
            self._new(f"{prefix}.b{m}", (d,), rng, value=0.0)

    def _mlp_params(self, prefix: str, d_in: int, hid: int, d_out: int, rng) -> None:
        self._new(f"{prefix}.w1", (d_in, hid), rng, 1 / math.sqrt(d_in))
        self._new(f"{prefix}.b1", (hid,), rng, value=0.0)
        self._new(f"{prefix}.w2", (hid, d_out), rng, 1 / math.sqrt(hid))
        self._new(f"{prefix}.b2", (d_out,), rng, value=0.0)

    def _norm_params(self, prefix: str, names) -> None:
        if not self.config.pre_norm:
            return
        d = self.config.d_model
        for n in names:
            self.params[f"{prefix}.{n}.gain"] = Tensor(np.ones(d), requires_grad=True)
            self.params[f"{prefix}.{n}.bias"] = Tensor(np.zeros(d), requires_grad=True)

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        nx.zero_grad(self.params.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        off = 0
        for p in self.params.values():
            n = p.data.size
            p.data = np.array(flat[off : off + n], dtype=np.float64).reshape(p.data.shape)
            off += n
        if off != flat.size:
            raise ModelError(f"flat vector has {flat.size} entries, model needs {off}")

    def bind_flat(self, flat: Tensor) -> "FaithModel":
        """A view of this model whose parameters are differentiable slices of ``flat``."""
        view = FaithModel.__new__(FaithModel)
        view.config = self.config
        view.pos_table = self.pos_table
        view.freq_out_channels = self.freq_out_channels
        view.params = {}
        off = 0
        for name, p in self.params.items():
            n = p.data.size
            view.params[name] = nx.reshape(nx.slice_flat(flat, off, off + n), p.shape)
            off += n
        if off != flat.shape[0]:
            raise ModelError(f"flat vector has {flat.shape[0]} entries, model needs {off}")
        return view

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


# ---------------------------------------------------------------- building blocks

def _mlp(model: FaithModel, prefix: str, x: Tensor) -> Tensor:
    p = model.params
    h = nx.gelu(nx.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return nx.linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _norm(model: FaithModel, prefix: str, x: Tensor) -> Tensor:
    if not model.config.pre_norm:
        return x
    p = model.params
    return nx.layer_norm(x, p[f"{prefix}.gain"], p[f"{prefix}.bias"])


def _heads(x: Tensor, h: int) -> Tensor:
    n, length, d = x.shape
    return nx.transpose(nx.reshape(x, (n, length, h, d // h)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    n, h, length, dh = x.shape
    return nx.reshape(nx.transpose(x, (0, 2, 1, 3)), (n, length, h * dh))


def attention(
    model: FaithModel,
    prefix: str,
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    key_bias: Tensor | None = None,
    causal: bool = False,
    keep: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Multi-head attention; returns ``(output, projected V)``.

    ``key_bias`` is ``[N, T]`` and is added to every query row of every head.
    ``keep`` collects the attention weights when given.
    """
    p = model.params
    h = model.config.heads
    q = nx.linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = nx.linear(k_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = nx.linear(v_in, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    qh, kh, vh = _heads(q, h), _heads(k, h), _heads(v, h)
    n, _, lq, dh = qh.shape
    lk = kh.shape[2]
    scores = nx.scale(nx.matmul(qh, nx.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if key_bias is not None:
        scores = nx.add(scores, nx.expand(nx.reshape(key_bias, (n, 1, 1, lk)), (n, h, lq, lk)))
    if causal:
        mask = np.triu(np.full((lq, lk), -np.inf), k=1)
        scores = nx.add_const(scores, np.broadcast_to(mask, scores.shape))
    w = nx.softmax(scores, axis=-1)
    if keep is not None:
        keep.append(w.data)
    out = nx.linear(_merge(nx.matmul(w, vh)), p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    return out, v


# ---------------------------------------------------------------- forward passes

def _check_images(model: FaithModel, images: np.ndarray) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ModelError(f"expected [N, 3, H, W] images, got {x.shape}")
    s = model.config.stride
    if x.shape[2] % s or x.shape[3] % s:
        raise ModelError(f"image {x.shape[2]}x{x.shape[3]} not divisible by backbone stride {s}")
    if x.shape[2] != model.config.image_size or x.shape[3] != model.config.image_size:
        raise ModelError(
            f"model configured for {model.config.image_size}px images, got {x.shape[2]}x{x.shape[3]}"
        )
    return x


def backbone_batch(model: FaithModel, images: np.ndarray) -> Tensor:
    x = Tensor(_check_images(model, images))
    for i in range(len(model.config.backbone_widths)):
        x = nx.conv2d(x, model.params[f"backbone.{i}.weight"], stride=2, padding=1)
        x = nx.gelu(nx.add_channel_bias(x, model.params[f"backbone.{i}.bias"]))
    return x


def encode_batch(model: FaithModel, f_cor: Tensor, keep: list | None = None) -> Tensor:
    cfg, p = model.config, model.params
    n, c, gh, gw = f_cor.shape
    if c != cfg.backbone_widths[-1] or gh != cfg.grid or gw != cfg.grid:
        raise ModelError(
            f"f_cor shape {list(f_cor.shape[1:])} does not match config "
            f"[{cfg.backbone_widths[-1]}, {cfg.grid}, {cfg.grid}]"
        )
    if cfg.learned_positions:
        pos = nx.expand(nx.reshape(p["encoder.pos"], (1, c, gh, gw)), f_cor.shape)
        with_pos = nx.add(f_cor, pos)
    else:
        with_pos = nx.add_const(f_cor, np.broadcast_to(model.pos_table, f_cor.shape))
    t = gh * gw

    def flat(x):
        return nx.transpose(nx.reshape(x, (n, c, t)), (0, 2, 1))

    spa = nx.linear(flat(with_pos), p["encoder.spa.weight"], p["encoder.spa.bias"])
    val = nx.linear(flat(f_cor), p["encoder.val.weight"], p["encoder.val.bias"])
    x = None
    for i in range(cfg.encoder_layers):
        pre = f"encoder.{i}"
        if i == 0:
            qk, v_in = _norm(model, f"{pre}.norm_attn", spa), _norm(model, f"{pre}.norm_attn", val)
        else:
            qk = v_in = _norm(model, f"{pre}.norm_attn", x)
        att, v = attention(model, f"{pre}.attn", qk, qk, v_in, keep=keep)
        mid = nx.add(att, v)
        x = nx.add(mid, _mlp(model, f"{pre}.mlp", _norm(model, f"{pre}.norm_mlp", mid)))
    return x if x is not None else spa


def frequency_batch(model: FaithModel, images: np.ndarray) -> tuple[Tensor, Tensor]:
    cfg, p = model.config, model.params
    x = Tensor(extract_frequency_map(_check_images(model, images), cfg.frequency))
    for i in range(cfg.freq_stages):
        x = nx.conv2d(x, p[f"freq.{i}.weight"], stride=2, padding=1)
        x = nx.gelu(nx.add_channel_bias(x, p[f"freq.{i}.bias"]))
    n, _, gh, gw = x.shape
    if gh != cfg.grid or gw != cfg.grid:
        raise ModelError(f"frequency grid {gh}x{gw} does not match encoder grid {cfg.grid}")
    mf = nx.add_channel_bias(nx.conv2d(x, p["freq.mf.weight"]), p["freq.mf.bias"])
    return x, nx.reshape(mf, (n, gh * gw))


def decoder_batch(
    model: FaithModel,
    tokens: np.ndarray,
    f_s: Tensor,
    m_f: Tensor | None,
    keep: list | None = None,
) -> Tensor:
    """``tokens`` is an int array ``[N, L]`` starting with SOS; returns logits ``[N, L, 7]``."""
    cfg, p = model.config, model.params
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise ModelError(f"tokens must be [N, L] with L >= 1, got {tokens.shape}")
    n, length = tokens.shape
    if length > cfg.max_len + 1:
        raise ModelError(f"token sequence of length {length} exceeds {cfg.max_len + 1}")
    if np.any(tokens[:, 0] != SOS):
        raise ModelError("token sequence must start with SOS")
    pos = nx.expand(
        nx.reshape(nx.index_rows(p["decoder.pos"], np.arange(length)), (1, length, cfg.d_model)),
        (n, length, cfg.d_model),
    )
    x = nx.add(nx.index_rows(p["decoder.embed"], tokens), pos)
    for i in range(cfg.decoder_layers):
        pre = f"decoder.{i}"
        xn = _norm(model, f"{pre}.norm_self", x)
        sa, _ = attention(model, f"{pre}.self", xn, xn, xn, causal=True)
        s = nx.add(x, sa)
        q_in = _norm(model, f"{pre}.norm_cross", s)
        mid, _ = attention(model, f"{pre}.cross", q_in, f_s, f_s, key_bias=m_f, keep=keep)
        if cfg.cross_residual:
            mid = nx.add(mid, s)
        x = nx.add(mid, _mlp(model, f"{pre}.mlp", _norm(model, f"{pre}.norm_mlp", mid)))
    return _mlp(model, "head", x)


def features(model: FaithModel, images: np.ndarray) -> tuple[Tensor, Tensor | None]:
    """Encoder output and (if enabled) the key bias for a batch of images."""
    f_s = encode_batch(model, backbone_batch(model, images))
    m_f = frequency_batch(model, images)[1] if model.config.use_frequency else None
    return f_s, m_f


# ---------------------------------------------------------------- single-image API

def backbone_forward(model: FaithModel, image) -> Tensor:
    out = backbone_batch(model, np.asarray(image)[None])
    return nx.reshape(out, out.shape[1:])


def encode(model: FaithModel, f_cor: Tensor) -> Tensor:
    out = encode_batch(model, nx.reshape(f_cor, (1,) + f_cor.shape))
    return nx.reshape(out, out.shape[1:])


def frequency_branch(model: FaithModel, image) -> tuple[Tensor, Tensor]:
    f_f, m_f = frequency_batch(model, np.asarray(image)[None])
    return nx.reshape(f_f, f_f.shape[1:]), nx.reshape(m_f, m_f.shape[1:])


def decoder_forward(model: FaithModel, tokens: Sequence[int], f_s: Tensor, m_f: Tensor | None) -> Tensor:
    t = np.asarray(tokens, dtype=np.int64)[None]
    fs = nx.reshape(f_s, (1,) + f_s.shape)
    mf = None if m_f is None else nx.reshape(m_f, (1,) + m_f.shape)
    out = decoder_batch(model, t, fs, mf)
    return nx.reshape(out, out.shape[1:])


# ---------------------------------------------------------------- decoding & loss

def predict_batch(model: FaithModel, images: np.ndarray) -> list[list[Attribute]]:
    """Greedy decoding for a batch; argmax ties go to the lowest class index."""
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    if n == 0:
        return []
    max_len = model.config.max_len
    with nx.no_grad():
        f_s, m_f = features(model, images)
        tokens = np.full((n, 1), SOS, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        out: list[list[int]] = [[] for _ in range(n)]
        for step in range(max_len + 1):
            if done.all():
                break
            logits = decoder_batch(model, tokens, f_s, m_f).data[:, -1, :]
            nxt = np.argmax(logits, axis=1)
            for i in range(n):
                if done[i]:
                    continue
                if nxt[i] == EOS or step == max_len:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
                    if len(out[i]) == max_len:
                        done[i] = True
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
    return [decode_sequence(s) for s in out]


def predict_sequence(model: FaithModel, image) -> list[Attribute]:
    return predict_batch(model, np.asarray(image)[None])[0]


def teacher_forcing(gts: Sequence[Sequence[Attribute | str]], max_len: int = MAX_EDITS):
    """Padded ``(inputs [N, max_len+1], targets [N, max_len+1], lengths [N])``."""
    n = len(gts)
    inputs = np.full((n, max_len + 1), EOS, dtype=np.int64)
    targets = np.full((n, max_len + 1), EOS, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, gt in enumerate(gts):
        ids = encode_sequence(gt)
        if len(ids) > max_len:
            raise ModelError(f"ground truth has {len(ids)} edits, maximum is {max_len}")
        inputs[i, 0] = SOS
        inputs[i, 1 : len(ids) + 1] = ids
        targets[i, : len(ids)] = ids
        targets[i, len(ids)] = EOS
        lengths[i] = len(ids)
    return inputs, targets, lengths


def sequence_loss(logits: Tensor, targets: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Per-sample mean cross-entropy over the L+1 supervised positions, averaged over the batch."""
    n, length, v = logits.shape
    rows = []
    weights = []
    for i in range(n):
        for t in range(int(lengths[i]) + 1):
            rows.append(i * length + t)
            weights.append(1.0 / ((lengths[i] + 1) * n))
    flat = nx.reshape(logits, (n * length, v))
    return nx.weighted_nll(flat, np.array(rows), targets.reshape(-1)[rows], np.array(weights))


def training_loss_batch(model: FaithModel, images: np.ndarray, gts) -> Tensor:
    inputs, targets, lengths = teacher_forcing(gts, model.config.max_len)
    f_s, m_f = features(model, images)
    logits = decoder_batch(model, inputs, f_s, m_f)
    return sequence_loss(logits, targets, lengths)


def training_loss(model: FaithModel, image, gt: Sequence[Attribute | str]) -> Tensor:
    """Teacher-forced loss for one image: mean CE over targets ``[a1..aL, EOS]``."""
    if len(gt) > model.config.max_len:
        raise ModelError(f"ground truth has {len(gt)} edits, maximum is {model.config.max_len}")
    ids = encode_sequence(gt)
    inputs = np.array([[SOS] + ids])
    targets = np.array(ids + [EOS])
    f_s, m_f = features(model, np.asarray(image)[None])
    logits = decoder_batch(model, inputs, f_s, m_f)
    return nx.cross_entropy(nx.reshape(logits, logits.shape[1:]), targets)
