"""Configurable residual classifier built on :mod:`seisbench.nn`.

Layout: a 3x3 stem conv, one extra plain 3x3 conv at base width when ``depth``
is odd, ``depth // 2`` two-conv basic blocks split over at most three stages
(filters double and resolution halves at each stage boundary), then global
average pooling and a linear head of width ``bottleneck``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ParseError, ShapeError, SpecificationError
from .nn import Tape, Var

BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ArchSpec:
    depth: int = 14
    in_channels: int = 1
    bottleneck: int = 2
    base_filters: int = 16

    def __post_init__(self):
        if not (isinstance(self.depth, int) and 2 <= self.depth <= 32):
            raise SpecificationError(f"depth must be an integer in [2, 32], got {self.depth!r}")
        if self.in_channels not in (1, 3):
            raise SpecificationError(f"in_channels must be 1 or 3, got {self.in_channels!r}")
        if self.bottleneck not in (1, 2):
            raise SpecificationError(f"bottleneck must be 1 or 2, got {self.bottleneck!r}")
        if not (isinstance(self.base_filters, int) and self.base_filters >= 1):
            raise SpecificationError("base_filters must be a positive integer")

    @property
    def n_blocks(self) -> int:
        return self.depth // 2

    def stage_sizes(self) -> list[int]:
        n_stages = min(3, self.n_blocks)
        q, r = divmod(self.n_blocks, n_stages)
        return [q + (1 if i < r else 0) for i in range(n_stages)]

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BlockSpec:
    name: str
    c_in: int
    c_out: int
    stride: int

    @property
    def projection(self) -> bool:
        return self.c_in != self.c_out or self.stride != 1


def block_layout(arch: ArchSpec) -> list[BlockSpec]:
    blocks = []
    c = arch.base_filters
    for s, n in enumerate(arch.stage_sizes()):
        c_out = arch.base_filters * 2 ** s
        for b in range(n):
            stride = 2 if (s > 0 and b == 0) else 1
            blocks.append(BlockSpec(f"stage{s}.block{b}", c, c_out, stride))
            c = c_out
    return blocks


@dataclass
class Model:
    arch: ArchSpec
    params: dict[str, np.ndarray]  # insertion order is the canonical parameter order
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    norm: bool = True

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def hidden_conv_layers(self) -> list[str]:
        """Names of the 3x3 hidden convs (stem and 1x1 projections excluded)."""
        return [k for k in self.params if k.endswith(".w") and ".conv" in k
                and not k.startswith("stem.") and self.params[k].shape[-1] == 3]

    def copy(self) -> "Model":
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()}, self.norm)


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_model(arch: ArchSpec, seed: int = 0, dtype=np.float32, norm: bool = True,
                zero_head: bool = True) -> Model:
    """Build and initialize a model deterministically from ``(arch, seed)``.

    ``norm=False`` drops every normalization layer. ``zero_head`` starts the head
    at zero so an untrained model outputs p = 0.5 for every input.
    """
    if not isinstance(arch, ArchSpec):
        raise SpecificationError("arch must be an ArchSpec")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    def conv(name, c_out, c_in, k):
        params[f"{name}.w"] = _kaiming(rng, (c_out, c_in, k, k), c_in * k * k, dtype)

    def bn(name, c):
        if norm:
            params[f"{name}.scale"] = np.ones(c, dtype)
            params[f"{name}.shift"] = np.zeros(c, dtype)
            buffers[f"{name}.mean"] = np.zeros(c, dtype)
            buffers[f"{name}.var"] = np.ones(c, dtype)

    conv("stem.conv", arch.base_filters, arch.in_channels, 3)
    bn("stem.bn", arch.base_filters)
    c = arch.base_filters
    if arch.depth % 2:
        conv("extra.conv", c, c, 3)
        bn("extra.bn", c)
    for blk in block_layout(arch):
        conv(f"{blk.name}.conv1", blk.c_out, blk.c_in, 3)
        bn(f"{blk.name}.bn1", blk.c_out)
        conv(f"{blk.name}.conv2", blk.c_out, blk.c_out, 3)
        bn(f"{blk.name}.bn2", blk.c_out)
        if blk.projection:
            conv(f"{blk.name}.proj", blk.c_out, blk.c_in, 1)
            bn(f"{blk.name}.proj_bn", blk.c_out)
        c = blk.c_out
    if zero_head:
        params["head.w"] = np.zeros((arch.bottleneck, c), dtype)
    else:
        params["head.w"] = _kaiming(rng, (arch.bottleneck, c), c, dtype)
    params["head.b"] = np.zeros(arch.bottleneck, dtype)
    return Model(arch, params, buffers, norm)


def count_params(arch: ArchSpec, norm: bool = True) -> int:
    """Closed-form parameter count of ``build_model(arch)``."""
    nb = 2 if norm else 0  # scale + shift per channel
    f = arch.base_filters
    total = 9 * arch.in_channels * f + nb * f
    c_in = f
    if arch.depth % 2:
        total += 9 * f * f + nb * f
    for s, n in enumerate(arch.stage_sizes()):
        c = f * 2 ** s
        total += n * (18 * c * c + 2 * nb * c) - 9 * c * c + 9 * c_in * c
        if c_in != c or s > 0:
            total += c_in * c + nb * c
        c_in = c
    return total + c_in * arch.bottleneck + arch.bottleneck


def forward(m: Model, x: np.ndarray, mode: str = "eval", tape: Tape | None = None
            ) -> tuple[Var, Tape | None]:
    """Run the network on a (B, C, H, W) batch; returns (logits Var, tape).

    In train mode a tape is created unless one is given; its first leaves are
    the model parameters (canonical order) followed by the input.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != m.arch.in_channels:
        raise ShapeError(f"expected (B, {m.arch.in_channels}, H, W) input, got {x.shape}")
    if mode == "train" and tape is None:
        tape = Tape()
    if tape is not None:
        P = {k: tape.leaf(v) for k, v in m.params.items()}
        h = tape.leaf(x.astype(m.dtype, copy=False))
    else:
        P = {k: Var(v) for k, v in m.params.items()}
        h = Var(x.astype(m.dtype, copy=False))

    def unit(h, name, stride, pad, bn_name, act=True):
        h = nn.conv2d(h, P[f"{name}.w"], stride, pad, tape)
        if m.norm:
            h = nn.batchnorm(h, P[f"{bn_name}.scale"], P[f"{bn_name}.shift"],
                             m.buffers[f"{bn_name}.mean"], m.buffers[f"{bn_name}.var"],
                             mode, tape=tape, name=bn_name)
        return nn.relu(h, tape) if act else h

    h = nn.channels_last(h, tape)
    h = unit(h, "stem.conv", 1, 1, "stem.bn")
    if m.arch.depth % 2:
        h = unit(h, "extra.conv", 1, 1, "extra.bn")
    for blk in block_layout(m.arch):
        n = blk.name
        out = unit(h, f"{n}.conv1", blk.stride, 1, f"{n}.bn1")
        out = unit(out, f"{n}.conv2", 1, 1, f"{n}.bn2", act=False)
        short = unit(h, f"{n}.proj", blk.stride, 0, f"{n}.proj_bn", act=False) if blk.projection else h
        h = nn.relu(nn.add(out, short, tape), tape)
    h = nn.global_avg_pool(h, tape)
    return nn.linear(h, P["head.w"], P["head.b"], tape), tape


def loss_and_grads(m: Model, x: np.ndarray, labels, seed: float = 1.0):
    """Train-mode forward + backward.

    Returns (loss, p_usable, grads aligned with ``m.params``, batch-norm stats).
    """
    logits, tape = forward(m, x, "train")
    loss, p = nn.classification_loss(logits, labels, tape)
    grads = nn.backward(tape, loss, seed=seed)
    return float(loss.value), p, grads[:len(m.params)], tape.bn_stats


def update_running_stats(m: Model, stats: list[nn.BNStats], momentum: float = BN_MOMENTUM) -> None:
    for st in stats:
        mean, var = m.buffers[f"{st.name}.mean"], m.buffers[f"{st.name}.var"]
        mean *= 1 - momentum
        mean += momentum * st.mean
        var *= 1 - momentum
        var += momentum * st.var


def predict_batch(m: Model, x: np.ndarray) -> np.ndarray:
    logits, _ = forward(m, x, "eval")
    return nn.probabilities(logits.value)


def predict_usable(m: Model, img: np.ndarray) -> float:
    """Probability of usable (coherent) energy for one (C, H, W) image."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) image, got {img.shape}")
    return float(predict_batch(m, img[None])[0])


# checkpoint: JSON header line, then little-endian float32 blobs for every
# parameter (canonical order) followed by every normalization buffer

def save_checkpoint(path: str | Path, m: Model, seed: int, epoch: int) -> None:
    tensors = list(m.params.items()) + list(m.buffers.items())
    header = {
        "arch": m.arch.to_json(),
        "norm": m.norm,
        "seed": seed,
        "epoch": epoch,
        "dtype": "f32",
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for _, v in tensors:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl])
        arch = ArchSpec(**header["arch"])
    except (ValueError, KeyError, TypeError) as e:
        raise ParseError(f"bad checkpoint header: {e}", line=1) from None
    m = build_model(arch, header["seed"], norm=header.get("norm", True))
    off = nl + 1
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape)) * 4
        if off + n > len(raw):
            raise ParseError(f"checkpoint truncated in tensor {t['name']!r}")
        arr = np.frombuffer(raw[off:off + n], dtype="<f4").reshape(shape).astype(np.float32)
        off += n
        target = m.params if t["name"] in m.params else m.buffers
        if t["name"] not in target:
            raise ParseError(f"unknown tensor {t['name']!r}", line=1, field="tensors")
        target[t["name"]] = arr
    if off != len(raw):
        raise ParseError("checkpoint payload size mismatch")
    return m, header
