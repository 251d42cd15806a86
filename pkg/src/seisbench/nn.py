"""Dense channels-last tensor kernels with a small reverse-mode tape.

Every op takes :class:`Var` inputs and an optional :class:`Tape`. With a tape the
op records a closure mapping the output gradient to input gradients; without
one it is a plain forward computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError


class Var:
    __slots__ = ("value", "slot")

    def __init__(self, value: np.ndarray, slot: int = -1):
        self.value = value
        self.slot = slot

    @property
    def shape(self):
        return self.value.shape


@dataclass
class BNStats:
    """Batch statistics observed by one normalization layer in train mode."""

    name: str
    mean: np.ndarray
    var: np.ndarray  # unbiased
    count: int


@dataclass
class Tape:
    entries: list = field(default_factory=list)
    leaves: list[Var] = field(default_factory=list)
    bn_stats: list[BNStats] = field(default_factory=list)
    n_slots: int = 0
    consumed: bool = False

    def leaf(self, value: np.ndarray) -> Var:
        v = Var(value, self.n_slots)
        self.n_slots += 1
        self.leaves.append(v)
        return v

    def _new(self, value: np.ndarray) -> Var:
        v = Var(value, self.n_slots)
        self.n_slots += 1
        return v


def _emit(tape: Tape | None, value: np.ndarray, inputs: Sequence[Var],
          backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Var:
    if tape is None:
        return Var(value)
    out = tape._new(value)
    tape.entries.append((out.slot, tuple(v.slot for v in inputs), backward))
    return out


def backward(tape: Tape, loss: Var, seed: float = 1.0) -> list[np.ndarray]:
    """Reverse-mode sweep; returns one gradient per tape leaf, in leaf order.

    ``seed`` scales the output gradient (used for shard weighting).
    """
    if tape.consumed:
        raise StateError("tape has already been consumed by backward()")
    if loss.slot < 0:
        raise StateError("loss was not computed on this tape")
    tape.consumed = True
    grads: list[np.ndarray | None] = [None] * tape.n_slots
    grads[loss.slot] = np.asarray(seed, dtype=loss.value.dtype) * np.ones_like(loss.value)
    for out_slot, in_slots, fn in reversed(tape.entries):
        g = grads[out_slot]
        if g is None:
            continue
        grads[out_slot] = None
        for s, gi in zip(in_slots, fn(g)):
            if s < 0 or gi is None:
                continue
            grads[s] = gi if grads[s] is None else grads[s] + gi
    out = []
    for leaf in tape.leaves:
        g = grads[leaf.slot]
        out.append(np.zeros_like(leaf.value) if g is None else g)
    tape.entries.clear()
    return out


# ---------------------------------------------------------------- kernels
# Activations are channels-last (batch, height, width, channels); kernels are
# stored (out, in, kh, kw).

def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _conv_shifted(x: Var, w: Var, pad: int, tape: Tape | None) -> Var:
    """Stride-1 conv as kh*kw matmuls over shifted views of the flattened padded input."""
    xv, wv = x.value, w.value
    b, h, wd, c = xv.shape
    o, _, kh, kw = wv.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    oh, ow = hp - kh + 1, wp - kw + 1
    extra = 1 if kw > 1 else 0  # keeps the last shifted slice in bounds
    xp = np.zeros((b, hp + extra, wp, c), dtype=xv.dtype)
    xp[:, pad:pad + h, pad:pad + wd] = xv
    xf = xp.reshape(b, -1, c)
    n = oh * wp
    taps = [(i * wp + j, np.ascontiguousarray(wv[:, :, i, j].T)) for i in range(kh) for j in range(kw)]
    acc = np.zeros((b, n, o), dtype=xv.dtype)
    for off, wt in taps:
        acc += xf[:, off:off + n] @ wt
    out = acc.reshape(b, oh, wp, o)[:, :, :ow]

    def bwd(g):
        gf = np.zeros((b, oh, wp, o), dtype=g.dtype)
        gf[:, :, :ow] = g
        gf = gf.reshape(b, n, o)
        dw = np.empty_like(wv)
        dxf = np.zeros_like(xf)
        for (off, wt), (i, j) in zip(taps, [(i, j) for i in range(kh) for j in range(kw)]):
            dw[:, :, i, j] = np.einsum("bnc,bno->oc", xf[:, off:off + n], gf, optimize=True)
            dxf[:, off:off + n] += gf @ wt.T
        dx = dxf.reshape(b, hp + extra, wp, c)[:, pad:pad + h, pad:pad + wd]
        return dx, dw

    return _emit(tape, np.ascontiguousarray(out), (x, w), bwd)


def _conv_im2col(x: Var, w: Var, stride: int, pad: int, tape: Tape | None) -> Var:
    xv, wv = x.value, w.value
    b, h, wd, c = xv.shape
    o, _, kh, kw = wv.shape
    oh, ow = conv_out_size(h, kh, stride, pad), conv_out_size(wd, kw, stride, pad)
    xp = np.pad(xv, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xv
    hs, ws = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    cols = np.empty((b, oh, ow, kh, kw, c), dtype=xv.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xp[:, i:i + hs:stride, j:j + ws:stride]
    cols = cols.reshape(b * oh * ow, kh * kw * c)
    wmat = wv.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    out = (cols @ wmat).reshape(b, oh, ow, o)

    def bwd(g):
        g2 = g.reshape(-1, o)
        dw = (cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
        dcols = (g2 @ wmat.T).reshape(b, oh, ow, kh, kw, c)
        dxp = np.zeros(xp.shape, dtype=xv.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, :, i, j]
        dx = dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, np.ascontiguousarray(dw)

    return _emit(tape, out, (x, w), bwd)


def conv2d(x: Var, w: Var, stride: int = 1, pad: int = 0, tape: Tape | None = None) -> Var:
    """Cross-correlation of x (B,H,W,C) with kernels w (O,C,kh,kw)."""
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and kernels")
    if stride < 1 or pad < 0:
        raise ShapeError("stride must be >= 1 and pad >= 0")
    _, h, wd, c = xv.shape
    _, ck, kh, kw = wv.shape
    if ck != c:
        raise ShapeError(f"kernel expects {ck} channels, input has {c}")
    if conv_out_size(h, kh, stride, pad) < 1 or conv_out_size(wd, kw, stride, pad) < 1:
        raise ShapeError("kernel larger than padded input")
    if stride == 1:
        return _conv_shifted(x, w, pad, tape)
    return _conv_im2col(x, w, stride, pad, tape)


def batchnorm(x: Var, scale: Var, shift: Var, running_mean: np.ndarray, running_var: np.ndarray,
              mode: str = "train", eps: float = 1e-5, tape: Tape | None = None,
              name: str = "bn") -> Var:
    """Per-channel normalization over (batch, h, w).

    Train mode uses the local batch statistics and appends them to
    ``tape.bn_stats``; the caller owns updating the running statistics.
    """
    xv = x.value
    b, h, w, c = xv.shape
    axes = (0, 1, 2)
    g, bt = scale.value, shift.value
    if mode == "eval":
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xv.dtype)
        xhat = (xv - running_mean) * inv
        out = g * xhat + bt

        def bwd_eval(gr):
            return gr * (g * inv), (gr * xhat).sum(axis=axes), gr.sum(axis=axes)

        return _emit(tape, out, (x, scale, shift), bwd_eval)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    n = b * h * w
    if n < 2:
        raise ShapeError("train-mode batchnorm needs at least 2 values per channel")
    mean = xv.mean(axis=axes)
    xc = xv - mean
    var = (xc * xc).mean(axis=axes)
    inv = (1.0 / np.sqrt(var + eps)).astype(xv.dtype)
    xhat = xc * inv
    if tape is not None:
        tape.bn_stats.append(BNStats(name, mean, var * (n / (n - 1)), n))

    def bwd(gr):
        dgamma = (gr * xhat).sum(axis=axes)
        dbeta = gr.sum(axis=axes)
        dxhat = gr * g
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return _emit(tape, g * xhat + bt, (x, scale, shift), bwd)


def channels_last(x: Var, tape: Tape | None = None) -> Var:
    """(B,C,H,W) -> (B,H,W,C)."""
    return _emit(tape, np.ascontiguousarray(x.value.transpose(0, 2, 3, 1)), (x,),
                 lambda g: (g.transpose(0, 3, 1, 2),))


def relu(x: Var, tape: Tape | None = None) -> Var:
    mask = x.value > 0
    return _emit(tape, x.value * mask, (x,), lambda g: (g * mask,))


def add(a: Var, b: Var, tape: Tape | None = None) -> Var:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return _emit(tape, a.value + b.value, (a, b), lambda g: (g, g))


def global_avg_pool(x: Var, tape: Tape | None = None) -> Var:
    """Spatial mean per channel: (B,H,W,C) -> (B,1,1,C)."""
    if x.value.ndim != 4:
        raise ShapeError("global_avg_pool expects (B,H,W,C)")
    b, h, w, c = x.shape
    out = x.value.mean(axis=(1, 2), keepdims=True)
    return _emit(tape, out, (x,),
                 lambda g: (np.broadcast_to(g / (h * w), x.shape).astype(x.value.dtype),))


def linear(x: Var, w: Var, bias: Var, tape: Tape | None = None) -> Var:
    """Affine map of flattened features; w is (out, in)."""
    xv = x.value.reshape(x.shape[0], -1)
    if w.shape[1] != xv.shape[1] or bias.shape != (w.shape[0],):
        raise ShapeError(f"linear: input width {xv.shape[1]} vs weights {w.shape}, bias {bias.shape}")
    out = xv @ w.value.T + bias.value

    def bwd(g):
        return (g @ w.value).reshape(x.shape), g.T @ xv, g.sum(axis=0)

    return _emit(tape, out, (x, w, bias), bwd)


def _check_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"{n} logits rows but {y.shape[0]} labels")
    return y


def softmax_ce(logits: Var, labels, tape: Tape | None = None) -> tuple[Var, np.ndarray]:
    """Mean cross-entropy over the batch for a width-2 head.

    Returns the loss and p_usable, the softmax weight of class 1 (coherent).
    """
    z = logits.value
    if z.ndim != 2 or z.shape[1] != 2:
        raise ShapeError(f"softmax_ce expects (B, 2) logits, got {z.shape}")
    y = _check_labels(labels, z.shape[0])
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    p = np.exp(logp)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, y].mean()
    n = z.shape[0]

    def bwd(g):
        d = p.copy()
        d[rows, y] -= 1.0
        return (d * (g / n),)

    return _emit(tape, np.asarray(loss, dtype=z.dtype), (logits,), bwd), p[:, 1]


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp of -|z| only, so no overflow for either sign
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_bce(logits: Var, labels, tape: Tape | None = None) -> tuple[Var, np.ndarray]:
    """Mean binary cross-entropy for a width-1 head; returns (loss, p_usable)."""
    z = logits.value
    if z.ndim != 2 or z.shape[1] != 1:
        raise ShapeError(f"sigmoid_bce expects (B, 1) logits, got {z.shape}")
    zf = z[:, 0]
    y = _check_labels(labels, z.shape[0]).astype(z.dtype)
    loss = (np.maximum(zf, 0) - zf * y + np.log1p(np.exp(-np.abs(zf)))).mean()
    p = sigmoid(zf)
    n = z.shape[0]
    return _emit(tape, np.asarray(loss, dtype=z.dtype), (logits,),
                 lambda g: (((p - y) * (g / n))[:, None],)), p


def classification_loss(logits: Var, labels, tape: Tape | None = None) -> tuple[Var, np.ndarray]:
    if logits.shape[1] == 2:
        return softmax_ce(logits, labels, tape)
    return sigmoid_bce(logits, labels, tape)


def probabilities(logits: np.ndarray) -> np.ndarray:
    """p_usable for a batch of logits from either head."""
    if logits.shape[1] == 1:
        return sigmoid(logits[:, 0])
    zs = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(zs)
    return e[:, 1] / e.sum(axis=1)


# ---------------------------------------------------------------- optimization

def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float,
             momentum: float = 0.0, velocity: list[np.ndarray] | None = None) -> list[np.ndarray] | None:
    """In-place SGD: v <- momentum*v + g; theta <- theta - lr*v.

    Returns the velocity buffers (None when momentum is 0).
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    if momentum == 0.0:
        for p, g in zip(params, grads):
            p -= lr * g
        return None
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v
    return velocity


# ---------------------------------------------------------------- gradient oracle

def finite_diff_grad(f: Callable[[], float], params: Sequence[np.ndarray], eps: float = 1e-5,
                     sample: int | None = None, rng: np.random.Generator | None = None,
                     kink_tol: float | None = None) -> list[np.ndarray]:
    """Central differences of ``f`` w.r.t. each array in ``params`` (perturbed in place).

    With ``sample`` set, only that many randomly chosen coordinates per array are
    evaluated and the rest are NaN.

    With ``kink_tol`` set, coordinates whose forward and backward one-sided
    slopes differ by more than ``2 * kink_tol`` are also NaN. Near a kink of a
    piecewise-linear function (relu) the central difference is off by exactly
    half that gap, so such coordinates cannot serve as an oracle.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = rng or np.random.default_rng(0)
    f0 = float(f()) if kink_tol is not None else 0.0
    out = []
    for p in params:
        g = np.full(p.shape, np.nan)
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("parameters must be contiguous so they can be perturbed in place")
        idx = np.arange(p.size)
        if sample is not None and sample < p.size:
            idx = rng.choice(p.size, size=sample, replace=False)
        gf = g.reshape(-1)
        for i in idx:
            orig = flat[i].copy()
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
            if kink_tol is not None and abs(fp - 2 * f0 + fm) / (2 * eps) > kink_tol:
                continue
            gf[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def relative_error(grads: Sequence[np.ndarray], ref: Sequence[np.ndarray]) -> float:
    """max|g - ref| / (max|ref| + 1e-12) over coordinates where ref is defined."""
    num, den = 0.0, 0.0
    for g, r in zip(grads, ref):
        m = np.isfinite(r)
        if not m.any():
            continue
        num = max(num, float(np.max(np.abs(np.asarray(g, np.float64)[m] - r[m]))))
        den = max(den, float(np.max(np.abs(r[m]))))
    return num / (den + 1e-12)
