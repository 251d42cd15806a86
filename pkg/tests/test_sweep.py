import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from seisbench import sweep
from seisbench.errors import ParseError, ValidationError
from seisbench.records import (
    EpochStats, HyperParams, RefProbs, RunRecord, dump_records, load_records, run_id,
)
from seisbench.seeding import mix64
from seisbench.sweep import AXES, enumerate_space, load_space, parse_space, point_seed, run_sweep

SINGLE = {"backend_label": ["cpu"], "workers": [1], "channel_mode": ["grayscale"], "batch": [64],
          "dataset_size": [64], "depth": [2], "bottleneck": [2], "lr": [0.01], "epochs": [1]}


def space_doc(**axes):
    ax = dict(SINGLE)
    ax.update(axes)
    return {"seed": 11, "axes": ax, "patch": {"n_time": 8, "n_chan": 8}}


def test_default_space_parses():
    s = load_space()
    assert list(s.axes) == list(AXES) and len(AXES) == 9
    assert s.axes["depth"] == [2, 4, 8, 14, 22, 32]
    assert len(s) == 6 * 2 * 4 * 4 * 6 * 2 * 6


def test_depth_out_of_bounds_names_axis():
    with pytest.raises(ValidationError) as e:
        parse_space(space_doc(depth=[2, 33]))
    assert e.value.field == "depth"


@pytest.mark.parametrize("axis", AXES)
def test_missing_axis_named(axis):
    doc = space_doc()
    del doc["axes"][axis]
    with pytest.raises(ValidationError) as e:
        parse_space(doc)
    assert e.value.field == axis


@pytest.mark.parametrize("axis,value", [("batch", 32), ("batch", 1024), ("lr", 0.0005), ("lr", 0.6),
                                        ("workers", 33), ("channel_mode", "cmyk"), ("bottleneck", 3),
                                        ("depth", 1.5)])
def test_axis_bounds(axis, value):
    with pytest.raises(ValidationError) as e:
        parse_space(space_doc(**{axis: [value]}))
    assert e.value.field == axis


def test_malformed_json_reports_line():
    text = '{\n  "seed": 1,\n  "axes": {\n    "depth": [2,,]\n}'
    with pytest.raises(ParseError) as e:
        parse_space(text)
    assert e.value.line == 4


def test_empty_axis_and_bad_seed():
    with pytest.raises(ValidationError):
        parse_space(space_doc(lr=[]))
    doc = space_doc()
    doc["seed"] = -1
    with pytest.raises(ValidationError):
        parse_space(doc)


def test_enumerate_four_points_in_order():
    pts = enumerate_space(parse_space(space_doc(depth=[2, 14], lr=[0.001, 0.5])))
    assert [(p.depth, p.lr) for p in pts] == [(2, 0.001), (2, 0.5), (14, 0.001), (14, 0.5)]
    assert pts == enumerate_space(parse_space(space_doc(depth=[2, 14], lr=[0.001, 0.5])))


def test_enumerate_36_models():
    s = parse_space(space_doc(depth=[2, 4, 8, 14, 22, 32], lr=[0.001, 0.005, 0.01, 0.05, 0.1, 0.5]))
    pts = enumerate_space(s)
    assert len(pts) == len(s) == 36
    assert len({run_id(p, point_seed(s, i)) for i, p in enumerate(pts)}) == 36


axis_values = {
    "workers": st.lists(st.sampled_from([1, 2, 4, 8]), min_size=1, max_size=3, unique=True),
    "batch": st.lists(st.sampled_from([64, 128, 256]), min_size=1, max_size=3, unique=True),
    "depth": st.lists(st.integers(2, 32), min_size=1, max_size=4, unique=True),
    "lr": st.lists(st.sampled_from([0.001, 0.01, 0.1, 0.5]), min_size=1, max_size=3, unique=True),
    "channel_mode": st.lists(st.sampled_from(["grayscale", "rgb"]), min_size=1, max_size=2, unique=True),
}


@settings(max_examples=40, deadline=None)
@given(st.fixed_dictionaries(axis_values))
def test_enumerate_is_full_product_with_unique_ids(axes):
    s = parse_space(space_doc(**axes))
    pts = enumerate_space(s)
    assert len(pts) == math.prod(len(v) for v in axes.values())
    assert len(set(pts)) == len(pts)
    assert len({run_id(p, point_seed(s, i)) for i, p in enumerate(pts)}) == len(pts)
    assert len({run_id(p, 0) for p in pts}) == len(pts)


def test_explicit_points_replace_grid():
    doc = space_doc()
    doc["points"] = [dict(HyperParams(depth=4, batch=64, dataset_size=64, epochs=1).to_json()),
                     dict(HyperParams(depth=6, batch=64, dataset_size=64, epochs=1).to_json())]
    pts = enumerate_space(parse_space(doc))
    assert [p.depth for p in pts] == [4, 6]
    doc["points"][0]["depth"] = 40
    with pytest.raises(ValidationError):
        parse_space(doc)


def test_point_seed_is_mix64():
    s = parse_space(space_doc())
    assert point_seed(s, 3) == mix64(11, 3)


def test_run_id_is_stable():
    hp = HyperParams()
    assert run_id(hp, 1) == run_id(HyperParams(), 1)
    assert run_id(hp, 1) != run_id(hp, 2)
    assert len(run_id(hp, 1)) == 16


# ---------------------------------------------------------------- records

def _record():
    hp = HyperParams(workers=2, batch=64, dataset_size=64, depth=2, epochs=2)
    eps = [EpochStats(1, 0.6931471805599453, 1234.5, 0.05184, RefProbs(0.5, 0.5, 0.5000001, 0.1)),
           EpochStats(2, 0.5, 1e-3, 64000.0, RefProbs(0.0, 1.0, 0.25, 1 / 3))]
    return RunRecord(run_id(hp, 9), hp, 9, 4882, "ok", eps)


def test_record_roundtrip_exact():
    r = _record()
    line = r.dumps()
    assert RunRecord.loads(line) == r
    assert RunRecord.loads(line).dumps() == line
    assert list(json.loads(line)) == ["run_id", "hp", "seed", "param_count", "status", "epochs"]
    assert list(json.loads(line)["epochs"][0]) == ["epoch", "loss", "samples_per_sec", "wall_time_s", "ref_probs"]


@settings(max_examples=50, deadline=None)
@given(probs=st.lists(st.tuples(*[st.floats(0, 1)] * 4), min_size=0, max_size=5),
       loss=st.floats(0, 100), seed=st.integers(0, 2**64 - 1))
def test_record_roundtrip_property(probs, loss, seed):
    hp = HyperParams()
    eps = [EpochStats(i + 1, loss, 1.0 + i, 2.0, RefProbs(*p)) for i, p in enumerate(probs)]
    r = RunRecord(run_id(hp, seed), hp, seed, 10, "diverged", eps)
    assert RunRecord.loads(r.dumps()) == r


def test_record_rejects_extra_or_bad_fields():
    d = json.loads(_record().dumps())
    d["extra"] = 1
    with pytest.raises(ParseError):
        RunRecord.from_json(d)
    d = json.loads(_record().dumps())
    d["status"] = "weird"
    with pytest.raises(ParseError):
        RunRecord.from_json(d)


def test_load_records_skips_partial_line(tmp_path):
    p = tmp_path / "r.jsonl"
    line = _record().dumps()
    p.write_text(line + "\n" + line[:40])
    assert len(load_records(p)) == 1
    with pytest.raises(ParseError) as e:
        load_records(p, strict=True)
    assert e.value.line == 2


# ---------------------------------------------------------------- runner

TOY = space_doc(depth=[2, 3], lr=[0.01, 0.05])


def test_toy_sweep_writes_distinct_records(tmp_path):
    out = tmp_path / "runs.jsonl"
    summary = run_sweep(parse_space(TOY), out)
    recs = load_records(out, strict=True)
    assert summary.ok + summary.diverged == 4 and summary.skipped == 0
    assert len(recs) == 4 and len({r.run_id for r in recs}) == 4
    assert [r.run_id for r in recs] == [run_id(hp, point_seed(parse_space(TOY), i))
                                        for i, hp in enumerate(enumerate_space(parse_space(TOY)))]


def test_resume_on_complete_sweep_trains_nothing(tmp_path):
    out = tmp_path / "runs.jsonl"
    run_sweep(parse_space(TOY), out)
    before = out.read_bytes()
    summary = run_sweep(parse_space(TOY), out, resume=True)
    assert summary.trained == 0 and summary.skipped == 4
    assert out.read_bytes() == before


def test_interrupt_then_resume(tmp_path, monkeypatch):
    out = tmp_path / "runs.jsonl"
    space = parse_space(TOY)
    real = sweep._run_point
    calls = []

    def interrupted(*a):
        if len(calls) == 3:
            raise KeyboardInterrupt
        calls.append(1)
        return real(*a)

    monkeypatch.setattr(sweep, "_run_point", interrupted)
    with pytest.raises(KeyboardInterrupt):
        run_sweep(space, out)
    first = out.read_bytes()
    assert first.count(b"\n") == 3
    with open(out, "ab") as fh:  # torn write from the interrupted run
        fh.write(first.splitlines()[0][:25])
    monkeypatch.setattr(sweep, "_run_point", real)
    summary = run_sweep(space, out, resume=True)
    assert summary.trained == 1 and summary.skipped == 3
    assert out.read_bytes().startswith(first)
    recs = load_records(out)
    assert len(recs) == 4 and len({r.run_id for r in recs}) == 4


def test_refuses_to_clobber(tmp_path):
    out = tmp_path / "runs.jsonl"
    out.write_text("x\n")
    with pytest.raises(FileExistsError):
        run_sweep(parse_space(TOY), out)
    run_sweep(parse_space(space_doc()), out, overwrite=True)
    assert len(load_records(out, strict=True)) == 1


def test_unwritable_output_fails_before_training(tmp_path, monkeypatch):
    monkeypatch.setattr(sweep, "_run_point", lambda *a: pytest.fail("trained"))
    with pytest.raises(OSError):
        run_sweep(parse_space(TOY), tmp_path / "missing" / "runs.jsonl")


def test_max_runs(tmp_path):
    out = tmp_path / "runs.jsonl"
    assert run_sweep(parse_space(TOY), out, max_runs=2).trained == 2
    assert run_sweep(parse_space(TOY), out, resume=True).trained == 2
    assert len(dump_records(load_records(out)).splitlines()) == 4
