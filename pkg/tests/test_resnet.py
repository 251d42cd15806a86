import numpy as np
import pytest

from seisbench.errors import ParseError, ShapeError, SpecificationError
from seisbench.resnet import (
    ArchSpec, block_layout, build_model, count_params, forward, load_checkpoint, loss_and_grads,
    predict_batch, predict_usable, save_checkpoint,
)
from seisbench.synth import PatchSpec, build_dataset
from seisbench.trainer import DataParallelTrainer, TrainConfig

from helpers import model_oracle_check


@pytest.mark.parametrize("depth", range(2, 33))
def test_hidden_layer_count_matches_depth(depth):
    arch = ArchSpec(depth, base_filters=2)
    m = build_model(arch, 0)
    assert len(m.hidden_conv_layers()) == depth
    assert len(block_layout(arch)) == depth // 2
    assert m.param_count() == count_params(arch)


@pytest.mark.parametrize("depth,blocks", [(2, 1), (14, 7), (32, 16)])
def test_block_counts(depth, blocks):
    assert len(block_layout(ArchSpec(depth))) == blocks


def test_stage_layout():
    assert ArchSpec(2).stage_sizes() == [1]
    assert ArchSpec(4).stage_sizes() == [1, 1]
    assert ArchSpec(14).stage_sizes() == [3, 2, 2]
    layout = block_layout(ArchSpec(14, base_filters=16))
    assert [(b.c_out, b.stride, b.projection) for b in layout] == [
        (16, 1, False), (16, 1, False), (16, 1, False),
        (32, 2, True), (32, 1, False), (64, 2, True), (64, 1, False)]


@pytest.mark.parametrize("depth", [2, 14, 32])
@pytest.mark.parametrize("norm", [True, False])
def test_count_params_matches_built_tally(depth, norm):
    for ch in (1, 3):
        for bott in (1, 2):
            arch = ArchSpec(depth, ch, bott)
            m = build_model(arch, 0, norm=norm)
            assert count_params(arch, norm) == sum(p.size for p in m.params.values())


def test_count_params_monotone_in_depth():
    counts = [count_params(ArchSpec(d)) for d in range(2, 33)]
    assert all(b > a for a, b in zip(counts, counts[1:]))


def test_count_params_channel_difference_is_stem_only():
    for d in (2, 14, 32):
        for f in (4, 16):
            diff = count_params(ArchSpec(d, 3, base_filters=f)) - count_params(ArchSpec(d, 1, base_filters=f))
            assert diff == 2 * 9 * f


@pytest.mark.parametrize("bad", [dict(depth=1), dict(depth=33), dict(in_channels=2),
                                 dict(bottleneck=3), dict(base_filters=0)])
def test_arch_validation(bad):
    with pytest.raises(SpecificationError):
        ArchSpec(**bad)


def test_construction_is_deterministic():
    a = build_model(ArchSpec(6), 42)
    b = build_model(ArchSpec(6), 42)
    c = build_model(ArchSpec(6), 43)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["stem.conv.w"], c.params["stem.conv.w"])


@pytest.mark.parametrize("bottleneck", [1, 2])
def test_forward_output_width_and_totality(bottleneck):
    m = build_model(ArchSpec(3, 3, bottleneck, base_filters=4), 0, zero_head=False)
    logits, tape = forward(m, np.zeros((1, 3, 16, 16), np.float32), "eval")
    assert tape is None
    assert logits.shape == (1, bottleneck) and np.all(np.isfinite(logits.value))


def test_eval_forward_is_deterministic():
    m = build_model(ArchSpec(4, base_filters=4), 1, zero_head=False)
    x = np.random.default_rng(0).random((3, 1, 16, 16)).astype(np.float32)
    a, _ = forward(m, x, "eval")
    b, _ = forward(m, x, "eval")
    assert a.value.tobytes() == b.value.tobytes()


def test_forward_channel_mismatch():
    m = build_model(ArchSpec(2, 1, base_filters=4), 0)
    with pytest.raises(ShapeError):
        forward(m, np.zeros((1, 3, 8, 8)), "eval")
    with pytest.raises(ShapeError):
        predict_usable(m, np.zeros((3, 8, 8)))


@pytest.mark.parametrize("depth", [2, 14])
@pytest.mark.parametrize("bottleneck", [1, 2])
def test_train_forward_backward_passes_gradcheck(depth, bottleneck):
    m = build_model(ArchSpec(depth, 1, bottleneck, base_filters=3), 5, dtype=np.float64, zero_head=False)
    x = np.random.default_rng(1).random((2, 1, 8, 8))
    e64, e32, coverage = model_oracle_check(m, x, [0, 1], sample=4)
    assert e64 <= 1e-5 and e32 <= 1e-2 and coverage >= 0.5


def test_zero_head_predicts_half():
    m = build_model(ArchSpec(4, base_filters=4), 0)
    x = np.random.default_rng(2).random((5, 1, 16, 16)).astype(np.float32)
    assert np.all(predict_batch(m, x) == 0.5)
    m1 = build_model(ArchSpec(4, bottleneck=1, base_filters=4), 0)
    assert predict_usable(m1, x[0]) == 0.5


def test_predictions_lie_in_unit_interval():
    m = build_model(ArchSpec(5, 3, base_filters=4), 0, zero_head=False)
    x = np.random.default_rng(3).normal(0, 50, (8, 3, 16, 16)).astype(np.float32)
    p = predict_batch(m, x)
    assert np.all((p >= 0) & (p <= 1))


def test_loss_and_grads_align_with_params():
    m = build_model(ArchSpec(3, base_filters=2), 0)
    loss, p, grads, stats = loss_and_grads(m, np.random.default_rng(0).random((4, 1, 8, 8)), [0, 1, 0, 1])
    assert [g.shape for g in grads] == [v.shape for v in m.params.values()]
    assert loss == pytest.approx(np.log(2), rel=1e-6)
    assert {s.name for s in stats} == {k[:-5] for k in m.buffers if k.endswith(".mean")}


def test_checkpoint_roundtrip(tmp_path):
    m = build_model(ArchSpec(5, 3, 1, base_filters=4), 9, zero_head=False)
    m.buffers["stem.bn.mean"][:] = 0.25
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, seed=9, epoch=3)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert b'"arch": {"depth": 5, "in_channels": 3, "bottleneck": 1, "base_filters": 4}' in header
    m2, hdr = load_checkpoint(path)
    assert hdr["epoch"] == 3 and hdr["seed"] == 9
    assert list(m2.params) == list(m.params)
    assert all(np.array_equal(m.params[k], m2.params[k]) for k in m.params)
    assert all(np.array_equal(m.buffers[k], m2.buffers[k]) for k in m.buffers)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_checkpoint(path)


@pytest.mark.slow
@pytest.mark.parametrize("depth", [2, 32])
def test_depth_extremes_remain_trainable(depth):
    spec = PatchSpec(16, 16)
    ds = build_dataset(32, 0.5, spec, "grayscale", seed=3).materialize()
    m = build_model(ArchSpec(depth), 7)
    x, y = ds.images(range(32)), ds.labels
    initial = loss_and_grads(m, x, y)[0]
    with DataParallelTrainer(m, TrainConfig(1, 32, 0.01, 0.0, 20, 7)) as tr:
        losses = [tr.train_epoch(ds).loss for _ in range(20)]
    assert min(losses) < initial
