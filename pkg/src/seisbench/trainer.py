"""Synchronous data-parallel SGD over in-process workers, plus an analytic
throughput model for scaling studies."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .errors import NumericError, ShapeError, SpecificationError
from .records import EpochStats, HyperParams, RunRecord, run_id
from .resnet import ArchSpec, Model, build_model, loss_and_grads, save_checkpoint, update_running_stats
from .seeding import derive_seed
from .selection import eval_reference
from .synth import Dataset, SignalType, n_channels

log = logging.getLogger(__name__)

INIT_STREAM = 10
SHUFFLE_STREAM = 11


@dataclass(frozen=True)
class TrainConfig:
    workers: int = 1
    batch: int = 128
    lr: float = 0.001
    momentum: float = 0.0
    epochs: int = 40
    seed: int = 0
    blas_threads: int | None = None  # cap BLAS threads while training; None leaves it alone

    def __post_init__(self):
        if self.workers < 1:
            raise SpecificationError("workers must be >= 1")
        if self.batch < self.workers:
            raise SpecificationError("batch must be >= workers")
        if self.epochs < 1:
            raise SpecificationError("epochs must be >= 1")
        if not self.lr > 0:
            raise SpecificationError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise SpecificationError("momentum must lie in [0, 1)")


def shard(indices: Sequence[int], workers: int) -> list[list[int]]:
    """Split in order into ``workers`` contiguous shards whose sizes differ by at most 1."""
    indices = list(indices)
    if workers < 1 or workers > len(indices):
        raise SpecificationError(f"cannot shard {len(indices)} items over {workers} workers")
    q, r = divmod(len(indices), workers)
    out, start = [], 0
    for w in range(workers):
        size = q + (1 if w < r else 0)
        out.append(indices[start:start + size])
        start += size
    return out


def tree_reduce_mean(grad_sets: Sequence[Sequence[np.ndarray]],
                     weights: Sequence[float] | None = None) -> list[np.ndarray]:
    """Combine per-worker gradient sets by a fixed pairwise tree.

    Each set is scaled by its weight (default 1/W, i.e. a plain mean; pass
    weights=[1]*W for sets that are already weighted). Pairs (0,1), (2,3), ...
    are summed first, then pairs of pairs, so the result is bit-identical for a
    fixed W.
    """
    w = len(grad_sets)
    if w == 0:
        raise SpecificationError("nothing to reduce")
    shapes = [g.shape for g in grad_sets[0]]
    for gs in grad_sets[1:]:
        if [g.shape for g in gs] != shapes:
            raise ShapeError("gradient sets are not shape-compatible")
    if weights is None:
        weights = [1.0 / w] * w
    level = [[g * wt for g in gs] if wt != 1.0 else [g.copy() for g in gs]
             for gs, wt in zip(grad_sets, weights)]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            a, b = level[i], level[i + 1]
            for x, y in zip(a, b):
                x += y
            nxt.append(a)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def _reduce_bn_stats(stat_sets: Sequence[list[nn.BNStats]], weights: Sequence[float]) -> list[nn.BNStats]:
    if len(stat_sets) == 1:
        return stat_sets[0]
    means = tree_reduce_mean([[s.mean for s in ss] for ss in stat_sets], weights)
    vars_ = tree_reduce_mean([[s.var for s in ss] for ss in stat_sets], weights)
    first = stat_sets[0]
    return [nn.BNStats(s.name, m, v, sum(ss[i].count for ss in stat_sets))
            for i, (s, m, v) in enumerate(zip(first, means, vars_))]


class DataParallelTrainer:
    """Owns the canonical model, optimizer state and a pool of W workers.

    Workers read the shared parameters and write only their own gradient
    buffers; reduction and the update run on the calling thread.
    """

    def __init__(self, model: Model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.velocity: list[np.ndarray] | None = None
        self.epoch = 0
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _worker(self, x: np.ndarray, y: np.ndarray, weight: float):
        # divergence is detected from the loss below, so overflow noise is muted
        with np.errstate(over="ignore", invalid="ignore"):
            return loss_and_grads(self.model, x, y, seed=weight)

    def step(self, x: np.ndarray, y: np.ndarray) -> float:
        n = len(y)
        parts = shard(range(n), min(self.cfg.workers, n))
        weights = [len(p) / n for p in parts]
        jobs = [(x[p[0]:p[-1] + 1], y[p[0]:p[-1] + 1], wt) for p, wt in zip(parts, weights)]
        if self._pool is None or len(jobs) == 1:
            results = [self._worker(*j) for j in jobs]
        else:
            results = list(self._pool.map(lambda j: self._worker(*j), jobs))
        loss = math.fsum(wt * r[0] for wt, r in zip(weights, results))
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {self.epoch + 1}")
        grads = tree_reduce_mean([r[2] for r in results], [1.0] * len(results))
        params = list(self.model.params.values())
        with np.errstate(over="ignore", invalid="ignore"):
            self.velocity = nn.sgd_step(params, grads, self.cfg.lr, self.cfg.momentum, self.velocity)
        if self.model.norm:
            update_running_stats(self.model, _reduce_bn_stats([r[3] for r in results], weights))
        return loss

    def train_epoch(self, dataset: Dataset, refset: Mapping[SignalType, np.ndarray] | None = None
                    ) -> EpochStats:
        if dataset.channels != self.model.arch.in_channels:
            raise ShapeError("dataset channel mode does not match the model")
        n = len(dataset)
        order = np.random.default_rng(derive_seed(self.cfg.seed, SHUFFLE_STREAM, self.epoch)).permutation(n)
        limits = nullcontext()
        if self.cfg.blas_threads is not None:
            from threadpoolctl import threadpool_limits
            limits = threadpool_limits(self.cfg.blas_threads)
        total_loss, wall = 0.0, 0.0
        with limits:
            for start in range(0, n, self.cfg.batch):
                idx = order[start:start + self.cfg.batch]
                x = dataset.images(idx)  # synthesis stays outside the timed region
                y = dataset.labels[idx]
                t0 = time.perf_counter()
                loss = self.step(x, y)
                wall += time.perf_counter() - t0
                total_loss += loss * len(idx)
        self.epoch += 1
        with np.errstate(over="ignore", invalid="ignore"):
            probs = eval_reference(self.model, refset) if refset is not None else None
        return EpochStats(self.epoch, total_loss / n, n / wall, wall, probs)


def train_epoch(model: Model, dataset: Dataset, cfg: TrainConfig,
                refset: Mapping[SignalType, np.ndarray] | None = None, epoch: int = 0) -> EpochStats:
    """One epoch with a fresh trainer (no momentum carried over)."""
    with DataParallelTrainer(model, cfg) as tr:
        tr.epoch = epoch
        return tr.train_epoch(dataset, refset)


def train_run(hp: HyperParams, dataset: Dataset, refset: Mapping[SignalType, np.ndarray], seed: int,
              momentum: float = 0.0, checkpoint_dir: str | Path | None = None,
              dtype=np.float32, base_filters: int = 16, blas_threads: int | None = None) -> RunRecord:
    """Train one configuration for ``hp.epochs`` epochs.

    A non-finite loss stops the run; the epochs completed so far are kept and
    the record is marked ``diverged``.
    """
    if len(dataset) != hp.dataset_size:
        raise SpecificationError(f"dataset has {len(dataset)} items, hp says {hp.dataset_size}")
    if n_channels(hp.channel_mode) != dataset.channels:
        raise SpecificationError("dataset channel mode does not match hp.channel_mode")
    arch = ArchSpec(hp.depth, n_channels(hp.channel_mode), hp.bottleneck, base_filters)
    model = build_model(arch, derive_seed(seed, INIT_STREAM), dtype=dtype)
    cfg = TrainConfig(hp.workers, hp.batch, hp.lr, momentum, hp.epochs, seed, blas_threads)
    rec = RunRecord(run_id(hp, seed), hp, seed, model.param_count())
    ckpt = None
    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir) / rec.run_id
        ckpt.mkdir(parents=True, exist_ok=True)
    with DataParallelTrainer(model, cfg) as tr:
        for _ in range(hp.epochs):
            try:
                stats = tr.train_epoch(dataset, refset)
            except NumericError as e:
                log.info("run %s diverged: %s", rec.run_id, e)
                rec.status = "diverged"
                break
            rec.epochs.append(stats)
            if ckpt is not None:
                save_checkpoint(ckpt / f"epoch_{stats.epoch:03d}.ckpt", model, seed, stats.epoch)
    return rec


# ---------------------------------------------------------------- cost model

@dataclass(frozen=True)
class ScalingCostModel:
    c_f: float  # seconds per sample of per-worker compute
    c_c: float  # seconds per reduction-tree level
    c_0: float  # fixed seconds per step
    s_w: float  # per-worker setup seconds per epoch

    def __post_init__(self):
        if not (self.c_f > 0 and self.c_c >= 0 and self.c_0 >= 0 and self.s_w >= 0):
            raise SpecificationError("cost constants must be >= 0 with c_f > 0")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ScalingCostModel":
        if path is None:
            text = resources.files("seisbench.data").joinpath("cost_model.json").read_text()
        else:
            text = Path(path).read_text()
        return cls(**json.loads(text))

    @classmethod
    def default(cls) -> "ScalingCostModel":
        return cls.load()

    def to_json(self) -> dict:
        return asdict(self)


def epoch_time(m: ScalingCostModel, workers: int, n: int, batch: int) -> float:
    if not (workers >= 1 and n >= batch >= workers):
        raise SpecificationError(f"need N >= batch >= workers >= 1, got N={n}, batch={batch}, W={workers}")
    steps = -(-n // batch)
    levels = math.ceil(math.log2(workers)) if workers > 1 else 0
    per_step = m.c_f * -(-batch // workers) + m.c_c * levels + m.c_0
    return m.s_w * workers + steps * per_step


def model_throughput(m: ScalingCostModel, workers: int, n: int, batch: int) -> float:
    """Modelled samples/second for one epoch."""
    return n / epoch_time(m, workers, n, batch)


def best_workers(m: ScalingCostModel, n: int, batch: int, grid: Sequence[int]) -> int:
    return max(grid, key=lambda w: model_throughput(m, w, n, batch))


def speedup(t_small: float, t_large: float) -> float:
    if not t_small > 0 or not t_large > 0:
        raise SpecificationError("throughputs must be positive")
    return t_large / t_small


def describe_speedup(ratio: float) -> str:
    if ratio > 100:
        return f"{ratio:.1f}x (more than two orders of magnitude)"
    if ratio > 10:
        return f"{ratio:.1f}x (more than one order of magnitude)"
    return f"{ratio:.2f}x"
