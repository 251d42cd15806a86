"""Model selection by expected probability ranges on the four reference images."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ShapeError, SpecificationError, ValidationError
from .records import REF_KEYS, RefProbs, RunRecord
from .resnet import Model, predict_batch
from .synth import REFERENCE_ORDER, SignalType


@dataclass(frozen=True)
class ExpectedRangeSpec:
    """Open interval (lo, hi) of acceptable p_usable per reference type."""

    white_noise: tuple[float, float] = (0.0, 0.1)
    coherent: tuple[float, float] = (0.9, 1.0)
    noncoherent: tuple[float, float] = (0.7, 0.9)
    saturated: tuple[float, float] = (0.2, 0.3)

    def __post_init__(self):
        for k in REF_KEYS:
            lo, hi = getattr(self, k)
            if not 0.0 <= lo < hi <= 1.0:
                raise ValidationError(k, f"need 0 <= lo < hi <= 1, got ({lo}, {hi})")

    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple(getattr(self, k) for k in REF_KEYS)

    @classmethod
    def from_json(cls, d: Mapping) -> "ExpectedRangeSpec":
        missing = [k for k in REF_KEYS if k not in d]
        if missing:
            raise ValidationError(missing[0], "missing range")
        out = {}
        for k in REF_KEYS:
            v = d[k]
            if not (isinstance(v, (list, tuple)) and len(v) == 2):
                raise ValidationError(k, "expected [lo, hi]")
            out[k] = (float(v[0]), float(v[1]))
        return cls(**out)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ExpectedRangeSpec":
        if path is None:
            text = resources.files("seisbench.data").joinpath("expected_ranges.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))

    def to_json(self) -> dict:
        return {k: list(getattr(self, k)) for k in REF_KEYS}


@dataclass(frozen=True)
class TypeCheck:
    name: str
    p: float
    lo: float
    hi: float

    @property
    def passed(self) -> bool:
        return self.lo < self.p < self.hi

    @property
    def midpoint(self) -> float:
        return (self.lo + self.hi) / 2


@dataclass(frozen=True)
class RangeReport:
    checks: tuple[TypeCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def distance(self) -> float:
        """L1 distance of the four probabilities to their interval midpoints."""
        return float(sum(abs(c.p - c.midpoint) for c in self.checks))

    def failed_types(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def check_ranges(probs: RefProbs, spec: ExpectedRangeSpec | None = None) -> RangeReport:
    spec = spec or ExpectedRangeSpec()
    ps = probs.as_tuple()
    if not all(0.0 <= p <= 1.0 for p in ps):
        raise SpecificationError(f"probabilities must lie in [0, 1], got {ps}")
    return RangeReport(tuple(TypeCheck(k, p, lo, hi)
                             for k, p, (lo, hi) in zip(REF_KEYS, ps, spec.bounds())))


def eval_reference(model: Model, refset: Mapping[SignalType, np.ndarray]) -> RefProbs:
    """Eval-mode p_usable on each reference image, in the fixed type order."""
    imgs = np.stack([refset[k] for k in REFERENCE_ORDER])
    if imgs.shape[1] != model.arch.in_channels:
        raise ShapeError(f"reference images have {imgs.shape[1]} channels, "
                         f"model expects {model.arch.in_channels}")
    p = predict_batch(model, imgs)
    return RefProbs(*(float(v) for v in p))


@dataclass(frozen=True)
class Candidate:
    run_id: str
    epoch: int
    report: RangeReport


@dataclass(frozen=True)
class Ranking:
    candidates: list[Candidate]  # passing (run, epoch) pairs, closest first
    n_total: int

    @property
    def n_pass(self) -> int:
        return len(self.candidates)

    def summary(self) -> str:
        return f"{self.n_pass}/{self.n_total} (run, epoch) candidates inside all ranges"


def rank_models(records: Iterable[RunRecord], spec: ExpectedRangeSpec | None = None) -> Ranking:
    """Every (run, epoch) checkpoint is a candidate; keep the passing ones, closest first."""
    spec = spec or ExpectedRangeSpec()
    scored = []
    total = 0
    for order, rec in enumerate(records):
        for ep in rec.epochs:
            total += 1
            rep = check_ranges(ep.ref_probs, spec)
            if rep.passed:
                scored.append((rep.distance, order, ep.epoch, Candidate(rec.run_id, ep.epoch, rep)))
    scored.sort(key=lambda t: t[:3])
    return Ranking([t[3] for t in scored], total)
