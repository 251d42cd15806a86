"""Plot-ready CSV exports: parallel coordinates, throughput maps and per-epoch
reference-probability matrices.

Floats are written with ``repr`` (shortest round-trip form) so every export
parses back to the exact source values and re-serializes byte-identically.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ParseError, SpecificationError
from .records import RunRecord
from .selection import ExpectedRangeSpec, check_ranges
from .synth import PatchSpec, build_dataset
from .trainer import DataParallelTrainer, ScalingCostModel, TrainConfig, model_throughput
from .resnet import ArchSpec, build_model

PARALLEL_COORDS_HEADER = ("run_id", "backend_label", "workers", "channel_mode", "batch",
                          "dataset_size", "depth", "bottleneck", "lr", "epochs",
                          "final_loss", "best_distance", "pass")
THROUGHPUT_HEADER = ("workers", "dataset_size", "batch", "samples_per_sec", "source")
PROB_MATRIX_HEADER = ("model_index", "run_id", "depth", "lr", "epoch", "p_white_noise",
                      "p_coherent", "p_noncoherent", "p_saturated", "pass")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true|false, got {s!r}")
    return s == "true"


def _optional(conv: Callable) -> Callable:
    return lambda s: None if s == "" else conv(s)


COLUMN_TYPES: dict[str, Callable] = {
    "run_id": str, "backend_label": str, "channel_mode": str, "source": str,
    "workers": int, "batch": int, "dataset_size": int, "depth": int, "bottleneck": int,
    "epochs": int, "epoch": int, "model_index": int,
    "lr": float, "samples_per_sec": float,
    "p_white_noise": float, "p_coherent": float, "p_noncoherent": float, "p_saturated": float,
    "final_loss": _optional(float), "best_distance": _optional(float),
    "pass": _bool,
}


def write_csv(header: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def read_csv(text: str, header: Sequence[str] | None = None) -> list[dict]:
    """Parse an export back into typed rows."""
    reader = csv.reader(io.StringIO(text))
    try:
        got = next(reader)
    except StopIteration:
        raise ParseError("empty CSV") from None
    if header is not None and tuple(got) != tuple(header):
        raise ParseError(f"unexpected header {got}", line=1)
    rows = []
    for lineno, raw in enumerate(reader, 2):
        if len(raw) != len(got):
            raise ParseError(f"{len(raw)} fields, expected {len(got)}", line=lineno)
        row = {}
        for k, v in zip(got, raw):
            try:
                row[k] = COLUMN_TYPES.get(k, str)(v)
            except ValueError as e:
                raise ParseError(str(e), line=lineno, field=k) from None
        rows.append(row)
    return rows


# ---------------------------------------------------------------- parallel coordinates

def parallel_coords_rows(records: Sequence[RunRecord], spec: ExpectedRangeSpec | None = None) -> list[dict]:
    spec = spec or ExpectedRangeSpec()
    rows = []
    for rec in records:
        reports = [check_ranges(e.ref_probs, spec) for e in rec.epochs]
        row = {"run_id": rec.run_id, **rec.hp.to_json()}
        row["final_loss"] = rec.epochs[-1].loss if rec.epochs else None
        row["best_distance"] = min(r.distance for r in reports) if reports else None
        row["pass"] = any(r.passed for r in reports)
        rows.append(row)
    return rows


def export_parallel_coords(records: Sequence[RunRecord], spec: ExpectedRangeSpec | None = None) -> str:
    """One row per run, in record order."""
    return write_csv(PARALLEL_COORDS_HEADER, parallel_coords_rows(records, spec))


# ---------------------------------------------------------------- throughput maps

@dataclass(frozen=True)
class ThroughputCell:
    workers: int
    dataset_size: int
    batch: int
    samples_per_sec: float
    source: str  # measured | modeled

    def __post_init__(self):
        if not self.samples_per_sec > 0:
            raise SpecificationError("samples_per_sec must be positive")
        if self.source not in ("measured", "modeled"):
            raise SpecificationError(f"bad source {self.source!r}")

    def to_row(self) -> dict:
        return dict(workers=self.workers, dataset_size=self.dataset_size, batch=self.batch,
                    samples_per_sec=self.samples_per_sec, source=self.source)


def _grid(workers: Sequence[int], sizes: Sequence[int], batches: Sequence[int]):
    if not (workers and sizes and batches):
        raise SpecificationError("every grid axis needs at least one value")
    for w, n, b in itertools.product(workers, sizes, batches):
        if not (w >= 1 and n >= b >= w):
            raise SpecificationError(f"invalid grid cell W={w}, N={n}, batch={b}")
        yield w, n, b


def modeled_cells(m: ScalingCostModel, workers: Sequence[int], sizes: Sequence[int],
                  batches: Sequence[int]) -> list[ThroughputCell]:
    return [ThroughputCell(w, n, b, model_throughput(m, w, n, b), "modeled")
            for w, n, b in _grid(workers, sizes, batches)]


def measured_cells(workers: Sequence[int], sizes: Sequence[int], batches: Sequence[int],
                   depth: int = 2, patch: PatchSpec | None = None, mode: str = "grayscale",
                   seed: int = 0, lr: float = 0.01) -> list[ThroughputCell]:
    """Time one real training epoch per grid cell, one BLAS thread per worker."""
    patch = patch or PatchSpec()
    cells = []
    cache = {}
    for w, n, b in _grid(workers, sizes, batches):
        if n not in cache:
            cache[n] = build_dataset(n, 0.5, patch, mode, seed).materialize()
        ds = cache[n]
        model = build_model(ArchSpec(depth, ds.channels), seed)
        with DataParallelTrainer(model, TrainConfig(w, b, lr, 0.0, 1, seed, blas_threads=1)) as tr:
            st = tr.train_epoch(ds)
        cells.append(ThroughputCell(w, n, b, st.samples_per_sec, "measured"))
    return cells


def cells_from_records(records: Sequence[RunRecord]) -> list[ThroughputCell]:
    """Mean per-epoch measured throughput per (workers, dataset_size, batch)."""
    groups: dict[tuple[int, int, int], list[float]] = {}
    for rec in records:
        key = (rec.hp.workers, rec.hp.dataset_size, rec.hp.batch)
        groups.setdefault(key, []).extend(e.samples_per_sec for e in rec.epochs)
    return [ThroughputCell(*k, float(np.mean(v)), "measured") for k, v in sorted(groups.items()) if v]


def export_throughput_map(cells: Sequence[ThroughputCell]) -> str:
    return write_csv(THROUGHPUT_HEADER, (c.to_row() for c in cells))


def best_workers_by_setting(rows: Iterable[dict]) -> dict[tuple[int, int], int]:
    """For each (dataset_size, batch) the worker count with the highest throughput."""
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for r in rows:
        key = (r["dataset_size"], r["batch"])
        if key not in best or r["samples_per_sec"] > best[key][0]:
            best[key] = (r["samples_per_sec"], r["workers"])
    return {k: v[1] for k, v in best.items()}


# ---------------------------------------------------------------- probability matrix

def model_order(records: Sequence[RunRecord]) -> list[RunRecord]:
    """Depth-major, learning-rate-minor; ties keep record order."""
    return sorted(records, key=lambda r: (r.hp.depth, r.hp.lr))


def prob_matrix_rows(records: Sequence[RunRecord], spec: ExpectedRangeSpec | None = None) -> list[dict]:
    spec = spec or ExpectedRangeSpec()
    rows = []
    for idx, rec in enumerate(model_order(records)):
        for e in rec.epochs:
            p = e.ref_probs
            rows.append({
                "model_index": idx, "run_id": rec.run_id, "depth": rec.hp.depth, "lr": rec.hp.lr,
                "epoch": e.epoch, "p_white_noise": p.white_noise, "p_coherent": p.coherent,
                "p_noncoherent": p.noncoherent, "p_saturated": p.saturated,
                "pass": check_ranges(p, spec).passed,
            })
    return rows


def export_prob_matrix(records: Sequence[RunRecord], spec: ExpectedRangeSpec | None = None) -> str:
    return write_csv(PROB_MATRIX_HEADER, prob_matrix_rows(records, spec))
