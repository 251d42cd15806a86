"""Shared oracles and fixtures for the test suite."""
from __future__ import annotations

import numpy as np

from seisbench import nn
from seisbench.records import EpochStats, HyperParams, RefProbs, RunRecord, run_id
from seisbench.resnet import Model, forward


def naive_conv_nchw(x, w, stride=1, pad=0):
    """Direct summation cross-correlation, NCHW input and (O,C,kh,kw) kernels."""
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, o, oh, ow))
    for n in range(b):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ch, i * stride + u, j * stride + v] * w[f, ch, u, v]
                    out[n, f, i, j] = acc
    return out


def conv_nchw(x, w, stride=1, pad=0):
    out = nn.conv2d(nn.Var(np.ascontiguousarray(x.transpose(0, 2, 3, 1))), nn.Var(w), stride, pad)
    return out.value.transpose(0, 3, 1, 2)


def weighted_sum(x: nn.Var, r: np.ndarray, tape) -> nn.Var:
    """Scalar sum(x * r) recorded on the tape; turns any op into a loss."""
    return nn._emit(tape, np.asarray((x.value * r).sum(), dtype=x.value.dtype), (x,),
                    lambda g: (g * r.astype(x.value.dtype),))


def op_cases(rng, dtype):
    """(name, build, arrays) for every differentiable op."""
    def arr(*shape, scale=1.0):
        return (rng.standard_normal(shape) * scale).astype(dtype)

    c = int(rng.integers(1, 4))
    o = int(rng.integers(1, 4))
    yield "conv3x3_s1", lambda x, w, tape: nn.conv2d(x, w, 1, 1, tape), [arr(2, 5, 5, c), arr(o, c, 3, 3)]
    yield "conv3x3_s2", lambda x, w, tape: nn.conv2d(x, w, 2, 1, tape), [arr(2, 6, 5, c), arr(o, c, 3, 3)]
    yield "conv1x1_s2", lambda x, w, tape: nn.conv2d(x, w, 2, 0, tape), [arr(2, 5, 6, c), arr(o, c, 1, 1)]
    yield "batchnorm_train", (lambda x, g, b, tape: nn.batchnorm(
        x, g, b, np.zeros(c, dtype), np.ones(c, dtype), "train", tape=tape)), \
        [arr(3, 3, 3, c, scale=2.0), 1 + arr(c, scale=0.3), arr(c)]
    yield "batchnorm_eval", (lambda x, g, b, tape: nn.batchnorm(
        x, g, b, np.full(c, 0.2, dtype), np.full(c, 1.5, dtype), "eval", tape=tape)), \
        [arr(2, 3, 3, c), arr(c), arr(c)]
    yield "relu", lambda x, tape: nn.relu(x, tape), [arr(2, 3, 3, c)]
    yield "add", lambda a, b, tape: nn.add(a, b, tape), [arr(2, 3, 3, c), arr(2, 3, 3, c)]
    yield "global_avg_pool", lambda x, tape: nn.global_avg_pool(x, tape), [arr(2, 3, 4, c)]
    yield "linear", lambda x, w, b, tape: nn.linear(x, w, b, tape), [arr(3, 1, 1, c), arr(o, c), arr(o)]
    yield "channels_last", lambda x, tape: nn.channels_last(x, tape), [arr(2, c, 3, 4)]
    labels = rng.integers(0, 2, 4)
    yield "softmax_ce", lambda z, tape: nn.softmax_ce(z, labels, tape)[0], [arr(4, 2, scale=2.0)]
    yield "sigmoid_bce", lambda z, tape: nn.sigmoid_bce(z, labels, tape)[0], [arr(4, 1, scale=2.0)]


def op_gradcheck(build, arrays, eps=1e-6, seed=0, kink_tol=1e-6):
    """Compare tape gradients of ``sum(build(*vars) * r)`` with central differences.

    ``build`` maps leaf Vars (and a tape) to an output Var. Gradients are taken
    in the arrays' own dtype; the oracle always runs in 64-bit on copies of the
    same values and skips coordinates that straddle a kink.
    """
    rng = np.random.default_rng(seed)
    tape = nn.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = build(*leaves, tape=tape)
    r = rng.standard_normal(out.shape)
    grads = nn.backward(tape, weighted_sum(out, r, tape))

    wide = [np.array(a, dtype=np.float64) for a in arrays]

    def f():
        return float((build(*[nn.Var(a) for a in wide], tape=None).value * r).sum())

    fd = nn.finite_diff_grad(f, wide, eps, kink_tol=kink_tol)
    return nn.relative_error(grads, fd)


def model_gradcheck(m: Model, x, y, eps, sample=6, seed=0):
    logits, tape = forward(m, x, "train")
    loss, _ = nn.classification_loss(logits, y, tape)
    grads = nn.backward(tape, loss)

    def f():
        lg, _ = forward(m, x, "train", nn.Tape())
        return float(nn.classification_loss(lg, y)[0].value)

    targets = list(m.params.values()) + [x]
    fd = nn.finite_diff_grad(f, targets, eps, sample=sample, rng=np.random.default_rng(seed))
    return nn.relative_error(grads, fd)


def _tape_grads(m: Model, x, y):
    logits, tape = forward(m, x, "train")
    loss, _ = nn.classification_loss(logits, y, tape)
    return nn.backward(tape, loss)


def model_oracle_check(m64: Model, x, y, eps=1e-6, sample=2, seed=0, kink_tol=1e-6):
    """Full-model check of 64- and 32-bit reverse-mode gradients against one
    64-bit central-difference oracle, skipping coordinates that straddle a relu
    kink. Returns (err64, err32, fraction of sampled coordinates checked)."""
    x = np.asarray(x, np.float64)
    g64 = _tape_grads(m64, x, y)
    m32 = Model(m64.arch, {k: v.astype(np.float32) for k, v in m64.params.items()},
                {k: v.astype(np.float32) for k, v in m64.buffers.items()}, m64.norm)
    g32 = _tape_grads(m32, x.astype(np.float32), y)

    def f():
        lg, _ = forward(m64, x, "train", nn.Tape())
        return float(nn.classification_loss(lg, y)[0].value)

    targets = list(m64.params.values()) + [x]
    fd = nn.finite_diff_grad(f, targets, eps, sample=sample, rng=np.random.default_rng(seed),
                             kink_tol=kink_tol)
    n = sum(min(sample, t.size) for t in targets)
    checked = sum(int(np.isfinite(r).sum()) for r in fd)
    return nn.relative_error(g64, fd), nn.relative_error(g32, fd), checked / n


def make_record(rid: str, probs_by_epoch, depth=14, lr=0.001, loss=0.5, workers=4, batch=128,
                dataset_size=1000, seed=0) -> RunRecord:
    hp = HyperParams("cpu", workers, "grayscale", batch, dataset_size, depth, 2, lr, len(probs_by_epoch))
    epochs = [EpochStats(i + 1, loss / (i + 1), 100.0 + i, 10.0 + i, RefProbs(*p))
              for i, p in enumerate(probs_by_epoch)]
    return RunRecord(rid or run_id(hp, seed), hp, seed, 1234, "ok", epochs)


SELECTED_EPOCHS = {  # epoch -> (white noise, coherent, noncoherent, saturated)
    25: (0.0657, 0.9008, 0.8551, 0.2975),
    26: (0.0449, 0.9058, 0.8566, 0.2568),
    27: (0.0320, 0.9111, 0.8592, 0.2268),
    28: (0.0237, 0.9163, 0.8628, 0.2048),
}
GRID_DEPTHS = (2, 4, 8, 14, 22, 32)
GRID_LRS = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)


def selection_fixture(seed=0, epochs=40):
    """36 runs x 40 epochs where only epochs 25-28 of the depth-14, lr-0.001 run
    lie inside every expected range. Records are emitted in a shuffled order."""
    rng = np.random.default_rng(seed)
    records = []
    for depth in GRID_DEPTHS:
        for lr in GRID_LRS:
            probs = []
            for ep in range(1, epochs + 1):
                p = rng.uniform(0, 1, 4)
                p[0] = rng.uniform(0.1, 1.0)  # white noise never inside (0, 0.1)
                probs.append(tuple(float(v) for v in p))
            if (depth, lr) == (14, 0.001):
                for ep, col in SELECTED_EPOCHS.items():
                    probs[ep - 1] = col
            records.append(make_record("", probs, depth=depth, lr=lr, seed=int(rng.integers(2**32))))
    order = rng.permutation(len(records))
    return [records[i] for i in order]
