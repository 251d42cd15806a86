"""Hyperparameter grid enumeration and a resumable sweep runner.

Space document::

    {"seed": 123,
     "axes": {"backend_label": [...], "workers": [...], "channel_mode": [...],
              "batch": [...], "dataset_size": [...], "depth": [...],
              "bottleneck": [...], "lr": [...], "epochs": [...]},
     "points": [{...HyperParams...}, ...],           # optional, replaces the grid
     "patch": {"n_time": 64, "n_chan": 64},          # optional
     "momentum": 0.0, "coherent_fraction": 0.5}      # optional
"""
from __future__ import annotations

import itertools
import json
import logging
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterator

from .errors import ParseError, ValidationError
from .records import HyperParams, RunRecord, iter_records, run_id
from .seeding import MASK64, derive_seed, mix64
from .synth import Dataset, PatchSpec, build_dataset, build_reference_set
from .trainer import train_run

log = logging.getLogger(__name__)

AXES = tuple(f.name for f in fields(HyperParams))
DATA_SEED_STREAM = 20
MATERIALIZE_LIMIT_BYTES = 512 * 2**20
OPTIONAL_KEYS = {"points", "patch", "momentum", "coherent_fraction"}


def _check_axis_value(axis: str, v) -> None:
    def num(lo=None, hi=None, integer=True):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and int(v) != v):
            raise ValidationError(axis, f"{v!r} is not {'an integer' if integer else 'a number'}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValidationError(axis, f"value {v!r} outside [{lo}, {hi}]")

    if axis == "backend_label":
        if not isinstance(v, str) or not v:
            raise ValidationError(axis, f"{v!r} is not a non-empty string")
    elif axis == "channel_mode":
        if v not in ("grayscale", "rgb"):
            raise ValidationError(axis, f"{v!r} is not grayscale|rgb")
    elif axis == "workers":
        num(1, 32)
    elif axis == "batch":
        num(64, 512)
    elif axis == "dataset_size":
        num(2)
    elif axis == "depth":
        num(2, 32)
    elif axis == "bottleneck":
        if v not in (1, 2) or isinstance(v, bool):
            raise ValidationError(axis, f"{v!r} is not 1 or 2")
    elif axis == "lr":
        num(0.001, 0.5, integer=False)
    elif axis == "epochs":
        num(1)


@dataclass
class SweepSpace:
    axes: dict[str, list]
    seed: int
    points: list[HyperParams] | None = None
    patch: PatchSpec = field(default_factory=PatchSpec)
    momentum: float = 0.0
    coherent_fraction: float = 0.5

    def __len__(self) -> int:
        if self.points is not None:
            return len(self.points)
        n = 1
        for a in AXES:
            n *= len(self.axes[a])
        return n

    def to_json(self) -> dict:
        d = {"seed": self.seed, "axes": self.axes}
        if self.points is not None:
            d["points"] = [p.to_json() for p in self.points]
        d["patch"] = {"n_time": self.patch.n_time, "n_chan": self.patch.n_chan}
        d["momentum"] = self.momentum
        d["coherent_fraction"] = self.coherent_fraction
        return d


def parse_space(document: str | bytes | dict) -> SweepSpace:
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, line=e.lineno) from None
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    unknown = set(doc) - {"seed", "axes"} - OPTIONAL_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    seed = doc.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MASK64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    axes_doc = doc.get("axes")
    if not isinstance(axes_doc, dict):
        raise ValidationError("axes", "missing or not an object")
    axes: dict[str, list] = {}
    for a in AXES:
        if a not in axes_doc:
            raise ValidationError(a, "missing axis")
        vals = axes_doc[a]
        if not isinstance(vals, list) or not vals:
            raise ValidationError(a, "axis must be a non-empty list")
        for v in vals:
            _check_axis_value(a, v)
        axes[a] = vals
    extra = set(axes_doc) - set(AXES)
    if extra:
        raise ValidationError(sorted(extra)[0], "unknown axis")

    points = None
    if "points" in doc:
        if not isinstance(doc["points"], list) or not doc["points"]:
            raise ValidationError("points", "must be a non-empty list")
        points = []
        for p in doc["points"]:
            if not isinstance(p, dict):
                raise ValidationError("points", "each point must be an object")
            for a in AXES:
                if a in p:
                    _check_axis_value(a, p[a])
            points.append(HyperParams.from_json(p))
    patch = PatchSpec()
    if "patch" in doc:
        try:
            patch = PatchSpec(int(doc["patch"]["n_time"]), int(doc["patch"]["n_chan"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError("patch", str(e)) from None
    momentum = float(doc.get("momentum", 0.0))
    if not 0.0 <= momentum < 1.0:
        raise ValidationError("momentum", "must lie in [0, 1)")
    frac = float(doc.get("coherent_fraction", 0.5))
    if not 0.0 < frac < 1.0:
        raise ValidationError("coherent_fraction", "must lie in (0, 1)")
    return SweepSpace(axes, seed, points, patch, momentum, frac)


def load_space(path: str | Path | None = None) -> SweepSpace:
    """Parse a space file; None loads the shipped default grid."""
    if path is None:
        return parse_space(resources.files("seisbench.data").joinpath("default_space.json").read_text())
    return parse_space(Path(path).read_text())


def enumerate_space(space: SweepSpace) -> list[HyperParams]:
    """Cartesian product in HyperParams field order, values in listed order."""
    if space.points is not None:
        return list(space.points)
    out = []
    for combo in itertools.product(*(space.axes[a] for a in AXES)):
        out.append(HyperParams(**dict(zip(AXES, combo))))
    return out


def point_seed(space: SweepSpace, index: int) -> int:
    return mix64(space.seed, index)


def data_seed(space: SweepSpace) -> int:
    return derive_seed(space.seed, DATA_SEED_STREAM)


@dataclass
class SweepSummary:
    ok: int = 0
    diverged: int = 0
    skipped: int = 0

    @property
    def trained(self) -> int:
        return self.ok + self.diverged


class _DataCache:
    """Small LRU of datasets keyed by (size, channel mode, seed)."""

    def __init__(self, space: SweepSpace, maxsize: int = 2):
        self.space = space
        self.maxsize = maxsize
        self._items: OrderedDict = OrderedDict()

    def get(self, hp: HyperParams) -> tuple[Dataset, dict]:
        key = (hp.dataset_size, hp.channel_mode, data_seed(self.space))
        if key in self._items:
            self._items.move_to_end(key)
            return self._items[key]
        ds = build_dataset(hp.dataset_size, self.space.coherent_fraction, self.space.patch,
                           hp.channel_mode, key[2])
        nbytes = hp.dataset_size * ds.channels * self.space.patch.n_time * self.space.patch.n_chan * 4
        if nbytes <= MATERIALIZE_LIMIT_BYTES:
            ds.materialize()
        ref = build_reference_set(self.space.patch, hp.channel_mode, key[2])
        self._items[key] = (ds, ref)
        while len(self._items) > self.maxsize:
            self._items.popitem(last=False)
        return ds, ref


_proc_cache: _DataCache | None = None


def _run_point(space: SweepSpace, hp: HyperParams, seed: int,
               checkpoint_dir: str | None) -> RunRecord:
    global _proc_cache
    if _proc_cache is None or _proc_cache.space is not space:
        _proc_cache = _DataCache(space)
    ds, ref = _proc_cache.get(hp)
    return train_run(hp, ds, ref, seed, momentum=space.momentum, checkpoint_dir=checkpoint_dir)


def existing_ids(path: str | Path) -> set[str]:
    if not os.path.exists(path):
        return set()
    return {r.run_id for r in iter_records(path)}


def run_sweep(space: SweepSpace, out: str | Path, resume: bool = False, overwrite: bool = False,
              max_runs: int | None = None, checkpoint_dir: str | Path | None = None,
              jobs: int = 1) -> SweepSummary:
    """Train every enumerated point and append one JSONL record per run.

    With ``resume`` the runs already present in ``out`` are skipped and the
    file is only appended to. ``max_runs`` stops after that many new runs.
    """
    out = Path(out)
    if out.exists() and out.stat().st_size > 0 and not (resume or overwrite):
        raise FileExistsError(f"{out} exists; pass resume or overwrite")
    done = existing_ids(out) if resume else set()
    # fail on an unwritable path before any training happens
    fh = open(out, "a" if resume else "w")
    summary = SweepSummary()
    try:
        if resume and out.stat().st_size > 0:
            with open(out, "rb") as r:
                r.seek(-1, os.SEEK_END)
                if r.read(1) != b"\n":
                    fh.write("\n")  # isolate a line cut short by an interrupted write
        todo = []
        for i, hp in enumerate(enumerate_space(space)):
            seed = point_seed(space, i)
            if run_id(hp, seed) in done:
                summary.skipped += 1
                continue
            todo.append((hp, seed))
        if max_runs is not None:
            todo = todo[:max_runs]
        ckpt = str(checkpoint_dir) if checkpoint_dir is not None else None

        def results() -> Iterator[RunRecord]:
            if not todo:
                return
            if jobs <= 1:
                for hp, seed in todo:
                    yield _run_point(space, hp, seed, ckpt)
            else:
                with ProcessPoolExecutor(jobs) as ex:
                    yield from ex.map(_run_point, *zip(*[(space, hp, seed, ckpt) for hp, seed in todo]))

        for rec in results():
            fh.write(rec.dumps() + "\n")
            fh.flush()
            if rec.status == "ok":
                summary.ok += 1
            else:
                summary.diverged += 1
            log.info("run %s %s (%d epochs)", rec.run_id, rec.status, len(rec.epochs))
    finally:
        fh.close()
    return summary
