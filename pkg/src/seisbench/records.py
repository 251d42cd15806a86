"""Run configuration and persisted run records (one JSON object per JSONL line)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ParseError, ValidationError

REF_KEYS = ("white_noise", "coherent", "noncoherent", "saturated")


@dataclass(frozen=True)
class HyperParams:
    """One point of the nine-axis training configuration space."""

    backend_label: str = "cpu"
    workers: int = 1
    channel_mode: str = "grayscale"
    batch: int = 128
    dataset_size: int = 1000
    depth: int = 14
    bottleneck: int = 2
    lr: float = 0.001
    epochs: int = 40

    def __post_init__(self):
        # accept integral floats from JSON, e.g. 128.0
        for name in ("workers", "batch", "dataset_size", "depth", "bottleneck", "epochs"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
                raise ValidationError(name, f"expected an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if isinstance(self.lr, bool) or not isinstance(self.lr, (int, float)):
            raise ValidationError("lr", f"expected a number, got {self.lr!r}")
        object.__setattr__(self, "lr", float(self.lr))
        if not isinstance(self.backend_label, str):
            raise ValidationError("backend_label", "expected a string")
        if self.channel_mode not in ("grayscale", "rgb"):
            raise ValidationError("channel_mode", f"expected grayscale|rgb, got {self.channel_mode!r}")
        if self.workers < 1:
            raise ValidationError("workers", "must be >= 1")
        if self.batch < self.workers:
            raise ValidationError("batch", "must be >= workers")
        if self.dataset_size < 2:
            raise ValidationError("dataset_size", "must be >= 2")
        if not 2 <= self.depth <= 32:
            raise ValidationError("depth", "must lie in [2, 32]")
        if self.bottleneck not in (1, 2):
            raise ValidationError("bottleneck", "must be 1 or 2")
        if not self.lr > 0:
            raise ValidationError("lr", "must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs", "must be >= 1")

    @classmethod
    def from_json(cls, d: dict) -> "HyperParams":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in d]
        if missing:
            raise ValidationError(missing[0], "missing")
        extra = set(d) - set(names)
        if extra:
            raise ValidationError(sorted(extra)[0], "unknown field")
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)


def run_id(hp: HyperParams, seed: int) -> str:
    payload = json.dumps({"hp": hp.to_json(), "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RefProbs:
    white_noise: float
    coherent: float
    noncoherent: float
    saturated: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.white_noise, self.coherent, self.noncoherent, self.saturated)

    def to_json(self) -> dict:
        return {k: float(v) for k, v in zip(REF_KEYS, self.as_tuple())}


@dataclass
class EpochStats:
    epoch: int
    loss: float
    samples_per_sec: float
    wall_time_s: float
    ref_probs: RefProbs

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": float(self.loss),
            "samples_per_sec": float(self.samples_per_sec),
            "wall_time_s": float(self.wall_time_s),
            "ref_probs": self.ref_probs.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EpochStats":
        rp = d["ref_probs"]
        return cls(int(d["epoch"]), float(d["loss"]), float(d["samples_per_sec"]),
                   float(d["wall_time_s"]), RefProbs(*(float(rp[k]) for k in REF_KEYS)))


@dataclass
class RunRecord:
    run_id: str
    hp: HyperParams
    seed: int
    param_count: int
    status: str = "ok"  # ok | diverged
    epochs: list[EpochStats] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "hp": self.hp.to_json(),
            "seed": self.seed,
            "param_count": self.param_count,
            "status": self.status,
            "epochs": [e.to_json() for e in self.epochs],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        keys = {"run_id", "hp", "seed", "param_count", "status", "epochs"}
        if set(d) != keys:
            raise ParseError(f"record keys {sorted(d)} != {sorted(keys)}")
        if d["status"] not in ("ok", "diverged"):
            raise ParseError(f"bad status {d['status']!r}", field="status")
        return cls(d["run_id"], HyperParams.from_json(d["hp"]), int(d["seed"]),
                   int(d["param_count"]), d["status"], [EpochStats.from_json(e) for e in d["epochs"]])

    @classmethod
    def loads(cls, line: str) -> "RunRecord":
        return cls.from_json(json.loads(line))


def iter_records(path: str | Path, strict: bool = False) -> Iterator[RunRecord]:
    """Read a JSONL record file. Unparsable lines (e.g. a line cut short by an
    interrupted write) are skipped unless ``strict``."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield RunRecord.loads(line)
            except (ValueError, KeyError, TypeError) as e:
                if strict:
                    raise ParseError(str(e), line=lineno) from None


def load_records(path: str | Path, strict: bool = False) -> list[RunRecord]:
    return list(iter_records(path, strict))


def dump_records(records: Iterable[RunRecord]) -> str:
    return "".join(r.dumps() + "\n" for r in records)
