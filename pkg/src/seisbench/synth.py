"""Synthetic DAS-like patches: four reference signal types, datasets and reference sets.

Amplitudes live on a (time, channel) grid. Coherent energy is modelled as Ricker
wavelets travelling along straight moveout lines across the channels.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, ParseError, SpecificationError
from .seeding import derive_seed

# Seed streams; keeping them distinct guarantees training items never share a
# seed with reference images.
DATA_STREAM = 0
LABEL_STREAM = 1
REF_STREAM = 2

CLIP_RATIO = 0.8
MIN_CLIP_FRACTION = 0.20


@dataclass(frozen=True)
class PatchSpec:
    n_time: int = 64
    n_chan: int = 64
    dt: float = 1.0
    dx: float = 1.0

    def __post_init__(self):
        if int(self.n_time) != self.n_time or self.n_time < 8:
            raise SpecificationError(f"n_time must be an integer >= 8, got {self.n_time}")
        if int(self.n_chan) != self.n_chan or self.n_chan < 8:
            raise SpecificationError(f"n_chan must be an integer >= 8, got {self.n_chan}")
        if not (self.dt > 0 and self.dx > 0):
            raise SpecificationError("dt and dx must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_time, self.n_chan)


class SignalType(enum.Enum):
    WHITE_NOISE = "white_noise"
    COHERENT = "coherent"
    NONCOHERENT = "noncoherent"
    SATURATED = "saturated"


REFERENCE_ORDER = (
    SignalType.WHITE_NOISE,
    SignalType.COHERENT,
    SignalType.NONCOHERENT,
    SignalType.SATURATED,
)


@dataclass(frozen=True)
class CoherentEventParams:
    amplitude: float
    velocity: float  # channels per time sample; sign is the propagation direction
    origin_chan: int
    onset: float  # time sample at which the event crosses origin_chan
    wavelet_freq: float  # cycles per sample

    def __post_init__(self):
        if not self.amplitude > 0:
            raise SpecificationError("event amplitude must be positive")
        if self.velocity == 0:
            raise SpecificationError("event velocity must be nonzero")
        if not 0 < self.wavelet_freq < 0.5:
            raise SpecificationError("wavelet_freq must lie in (0, 0.5)")

    def arrival_times(self, n_chan: int) -> np.ndarray:
        chans = np.arange(n_chan, dtype=np.float64)
        return self.onset + (chans - self.origin_chan) / self.velocity

    @property
    def main_lobe_halfwidth(self) -> float:
        """Distance in samples from the peak to the first zero crossing."""
        return 1.0 / (math.pi * self.wavelet_freq * math.sqrt(2.0))


@dataclass
class Patch:
    spec: PatchSpec
    values: np.ndarray
    label: SignalType | None = None
    events: tuple[CoherentEventParams, ...] = ()
    noise_sigma: float = 0.0
    clip: float | None = None

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise DataError(f"values shape {self.values.shape} != {self.spec.shape}")


def ricker(t: np.ndarray, freq: float) -> np.ndarray:
    a = (math.pi * freq * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def _render_events(spec: PatchSpec, events: Sequence[CoherentEventParams]) -> np.ndarray:
    t = np.arange(spec.n_time, dtype=np.float64)[:, None]
    out = np.zeros(spec.shape)
    for ev in events:
        out += ev.amplitude * ricker(t - ev.arrival_times(spec.n_chan)[None, :], ev.wavelet_freq)
    return out


def _draw_event(rng: np.random.Generator, spec: PatchSpec, sign: int,
                amp: tuple[float, float], freq: tuple[float, float]) -> CoherentEventParams:
    speed = rng.uniform(0.5, 4.0)
    return CoherentEventParams(
        amplitude=float(rng.uniform(*amp)),
        velocity=float(sign * speed),
        origin_chan=int(rng.integers(spec.n_chan // 4, 3 * spec.n_chan // 4 + 1)),
        onset=float(rng.uniform(0.25 * spec.n_time, 0.75 * spec.n_time)),
        wavelet_freq=float(rng.uniform(*freq)),
    )


def gen_patch(kind: SignalType, spec: PatchSpec, seed: int) -> Patch:
    """Generate one labelled patch; deterministic in ``(kind, spec, seed)``."""
    if not isinstance(spec, PatchSpec):
        raise SpecificationError("spec must be a PatchSpec")
    kind = SignalType(kind)
    rng = np.random.default_rng(seed)
    events: list[CoherentEventParams] = []
    clip = None

    if kind is SignalType.WHITE_NOISE:
        sigma = 1.0
    elif kind is SignalType.COHERENT:
        sigma = 1.0
        sign = 1 if rng.random() < 0.5 else -1
        for _ in range(int(rng.integers(1, 4))):
            events.append(_draw_event(rng, spec, sign, (6.0, 12.0), (0.06, 0.15)))
    elif kind is SignalType.NONCOHERENT:
        sigma = 2.0
        n = int(rng.integers(3, 6))
        signs = [1, -1] + [1 if rng.random() < 0.5 else -1 for _ in range(n - 2)]
        for s in signs:
            events.append(_draw_event(rng, spec, s, (6.0, 12.0), (0.06, 0.15)))
    else:
        # parallel, time-separated events so side lobes never eat into main lobes
        sigma = 1.0
        first = _draw_event(rng, spec, 1 if rng.random() < 0.5 else -1, (20.0, 30.0), (0.05, 0.09))
        gap = 0.8 / first.wavelet_freq
        onset = rng.uniform(0.15, 0.3) * spec.n_time
        for k in range(int(rng.integers(2, 4))):
            events.append(CoherentEventParams(
                amplitude=float(first.amplitude * rng.uniform(1.0, 1.1)),
                velocity=first.velocity,
                origin_chan=first.origin_chan,
                onset=float(onset + k * gap),
                wavelet_freq=first.wavelet_freq,
            ))
        clip = CLIP_RATIO * min(ev.amplitude for ev in events)

    values = sigma * rng.standard_normal(spec.shape) + _render_events(spec, events)
    if clip is not None:
        values = np.clip(values, -clip, clip)
    return Patch(spec, values, kind, tuple(events), sigma, clip)


def event_band_mask(patch: Patch) -> np.ndarray:
    """Samples within the main lobe of any event's moveout line."""
    t = np.arange(patch.spec.n_time, dtype=np.float64)[:, None]
    mask = np.zeros(patch.spec.shape, dtype=bool)
    for ev in patch.events:
        mask |= np.abs(t - ev.arrival_times(patch.spec.n_chan)[None, :]) <= ev.main_lobe_halfwidth
    return mask


def clipped_fraction(patch: Patch) -> float:
    if patch.clip is None:
        return 0.0
    band = event_band_mask(patch)
    if not band.any():
        return 0.0
    at_bound = np.abs(patch.values) >= patch.clip
    return float(at_bound[band].mean())


def normalize_patch(p: Patch) -> Patch:
    v = np.asarray(p.values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("patch contains non-finite values")
    lo, hi = v.min(), v.max()
    if hi == lo:
        out = np.full_like(v, 0.5)
    else:
        out = (v - lo) / (hi - lo)
    return Patch(p.spec, out, p.label, p.events, p.noise_sigma, p.clip)


def diverging_rgb(v: np.ndarray) -> np.ndarray:
    """Blue-white-red map: 0 -> (0,0,1), 0.5 -> (1,1,1), 1 -> (1,0,0)."""
    v = np.asarray(v, dtype=np.float64)
    lower = v <= 0.5
    up = np.where(lower, 2.0 * v, 1.0)
    down = np.where(lower, 1.0, 2.0 * (1.0 - v))
    return np.stack([up, np.minimum(up, down), down])


def encode_channels(p: Patch, mode: str = "grayscale") -> np.ndarray:
    """Return a (channels, n_time, n_chan) float32 image tensor in [0, 1]."""
    v = np.asarray(p.values)
    if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
        raise DataError("encode_channels expects a patch normalized to [0, 1]")
    if mode == "grayscale":
        return v[None].astype(np.float32)
    if mode == "rgb":
        return diverging_rgb(v).astype(np.float32)
    raise SpecificationError(f"unknown channel mode {mode!r}")


def n_channels(mode: str) -> int:
    try:
        return {"grayscale": 1, "rgb": 3}[mode]
    except KeyError:
        raise SpecificationError(f"unknown channel mode {mode!r}") from None


def make_image(kind: SignalType, spec: PatchSpec, seed: int, mode: str) -> np.ndarray:
    return encode_channels(normalize_patch(gen_patch(kind, spec, seed)), mode)


def coherent_count(n: int, coherent_fraction: float) -> int:
    return int(math.floor(n * coherent_fraction + 0.5))


@dataclass
class Dataset:
    """Labelled coherent-vs-noise images, generated lazily per item.

    Labels are 1 for coherent waves and 0 for white noise.
    """

    spec: PatchSpec
    mode: str
    seed: int
    labels: np.ndarray
    _cache: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return n_channels(self.mode)

    def item_seed(self, i: int) -> int:
        return derive_seed(self.seed, DATA_STREAM, i)

    def kind(self, i: int) -> SignalType:
        return SignalType.COHERENT if self.labels[i] == 1 else SignalType.WHITE_NOISE

    def image(self, i: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache[i]
        return make_image(self.kind(i), self.spec, self.item_seed(i), self.mode)

    def images(self, indices: Sequence[int]) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if self._cache is not None:
            return self._cache[idx]
        out = np.empty((len(idx), self.channels, *self.spec.shape), dtype=np.float32)
        for k, i in enumerate(idx):
            out[k] = self.image(int(i))
        return out

    def materialize(self) -> "Dataset":
        if self._cache is None:
            self._cache = self.images(range(len(self)))
        return self

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for i in range(len(self)):
            yield self.image(i), int(self.labels[i])


def build_dataset(n: int, coherent_fraction: float = 0.5, spec: PatchSpec | None = None,
                  mode: str = "grayscale", seed: int = 0) -> Dataset:
    spec = spec or PatchSpec()
    n_channels(mode)
    if n < 2:
        raise SpecificationError(f"dataset size must be >= 2, got {n}")
    if not 0.0 < coherent_fraction < 1.0:
        raise SpecificationError("coherent_fraction must lie strictly between 0 and 1")
    k = coherent_count(n, coherent_fraction)
    if k == 0 or k == n:
        raise SpecificationError(f"n={n}, fraction={coherent_fraction} yields a single class")
    labels = np.zeros(n, dtype=np.int64)
    labels[:k] = 1
    np.random.default_rng(derive_seed(seed, LABEL_STREAM)).shuffle(labels)
    return Dataset(spec, mode, seed, labels)


def reference_seed(seed: int, kind: SignalType) -> int:
    return derive_seed(seed, REF_STREAM, REFERENCE_ORDER.index(kind))


def build_reference_set(spec: PatchSpec | None = None, mode: str = "grayscale",
                        seed: int = 0) -> dict[SignalType, np.ndarray]:
    """One encoded image per signal type, in REFERENCE_ORDER."""
    spec = spec or PatchSpec()
    return {k: make_image(k, spec, reference_seed(seed, k), mode) for k in REFERENCE_ORDER}


# patch container: one JSON header line, then row-major little-endian float32

def write_patch(path: str | Path, patch: Patch) -> None:
    header = {
        "n_time": patch.spec.n_time,
        "n_chan": patch.spec.n_chan,
        "dtype": "f32",
        "label": patch.label.value if patch.label is not None else None,
    }
    body = np.ascontiguousarray(patch.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(body)


def read_patch(path: str | Path) -> Patch:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("missing header line", line=1)
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise ParseError(f"bad header JSON: {e}", line=1) from None
    for key in ("n_time", "n_chan", "dtype", "label"):
        if key not in header:
            raise ParseError("missing header key", line=1, field=key)
    if header["dtype"] != "f32":
        raise ParseError(f"unsupported dtype {header['dtype']!r}", line=1, field="dtype")
    spec = PatchSpec(int(header["n_time"]), int(header["n_chan"]))
    body = raw[nl + 1:]
    if len(body) != 4 * spec.n_time * spec.n_chan:
        raise ParseError(f"expected {4 * spec.n_time * spec.n_chan} payload bytes, got {len(body)}")
    values = np.frombuffer(body, dtype="<f4").reshape(spec.shape).astype(np.float64)
    label = SignalType(header["label"]) if header["label"] is not None else None
    return Patch(spec, values, label)
