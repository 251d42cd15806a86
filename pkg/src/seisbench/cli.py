"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
SEISBENCH_SEED, when set, overrides every seed given on the command line or in
a configuration file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report
from .errors import DataError, NumericError, ParseError, ShapeError, SpecificationError
from .records import HyperParams, load_records
from .seeding import env_seed
from .selection import ExpectedRangeSpec, rank_models
from .synth import PatchSpec, SignalType, build_dataset, build_reference_set, gen_patch, write_patch
from .trainer import ScalingCostModel, train_run

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


def _patch(args) -> PatchSpec:
    return PatchSpec(args.n_time, args.n_chan)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_synth(args) -> int:
    p = gen_patch(SignalType(args.type), _patch(args), env_seed(args.seed))
    write_patch(args.out, p)
    print(f"wrote {p.label.value} patch {p.spec.n_time}x{p.spec.n_chan} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    hp = HyperParams(args.backend_label, args.workers, args.channel_mode, args.batch,
                     args.dataset_size, args.depth, args.bottleneck, args.lr, args.epochs)
    seed = env_seed(args.seed)
    patch = _patch(args)
    ds = build_dataset(hp.dataset_size, 0.5, patch, hp.channel_mode, seed).materialize()
    ref = build_reference_set(patch, hp.channel_mode, seed)
    rec = train_run(hp, ds, ref, seed, momentum=args.momentum, checkpoint_dir=args.checkpoint_dir)
    line = rec.dumps() + "\n"
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(line)
    else:
        sys.stdout.write(line)
    for e in rec.epochs:
        p = e.ref_probs
        print(f"epoch {e.epoch:3d} loss {e.loss:.4f} {e.samples_per_sec:8.1f} samples/s "
              f"p=({p.white_noise:.4f}, {p.coherent:.4f}, {p.noncoherent:.4f}, {p.saturated:.4f})",
              file=sys.stderr)
    print(f"status: {rec.status}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import load_space, run_sweep

    space = load_space(args.space)
    space.seed = env_seed(space.seed)
    summary = run_sweep(space, args.out, resume=args.resume, overwrite=args.overwrite,
                        max_runs=args.max_runs, checkpoint_dir=args.checkpoint_dir, jobs=args.jobs)
    print(f"trained {summary.trained} (ok {summary.ok}, diverged {summary.diverged}), "
          f"skipped {summary.skipped}")
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = ExpectedRangeSpec.load(args.spec)
    ranking = rank_models(load_records(args.records, strict=True), spec)
    head = ("run_id", "epoch", "p_white_noise", "p_coherent", "p_noncoherent", "p_saturated",
            "pass_wn", "pass_coh", "pass_nc", "pass_sat", "distance")
    print("\t".join(head))
    for c in ranking.candidates[:args.top]:
        ps = [f"{chk.p:.4f}" for chk in c.report.checks]
        flags = ["Y" if chk.passed else "N" for chk in c.report.checks]
        print("\t".join([c.run_id, str(c.epoch), *ps, *flags, f"{c.report.distance:.4f}"]))
    print(ranking.summary())
    return EXIT_OK


def cmd_bench(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    try:
        workers, sizes, batches = grid["workers"], grid["dataset_size"], grid["batch"]
    except KeyError as e:
        raise SpecificationError(f"grid is missing {e.args[0]!r}") from None
    if args.mode == "modeled":
        cm = ScalingCostModel(**grid["cost_model"]) if "cost_model" in grid else ScalingCostModel.default()
        cells = report.modeled_cells(cm, workers, sizes, batches)
    else:
        patch = PatchSpec(**grid["patch"]) if "patch" in grid else PatchSpec()
        cells = report.measured_cells(workers, sizes, batches, depth=grid.get("depth", 2),
                                      patch=patch, seed=env_seed(grid.get("seed", 0)))
    _write(report.export_throughput_map(cells), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    records = load_records(args.records, strict=True)
    spec = ExpectedRangeSpec.load(args.spec)
    if args.kind == "parallel-coords":
        text = report.export_parallel_coords(records, spec)
    elif args.kind == "throughput-map":
        text = report.export_throughput_map(report.cells_from_records(records))
    else:
        text = report.export_prob_matrix(records, spec)
    _write(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seisbench", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def patch_args(p):
        p.add_argument("--n-time", type=int, default=64)
        p.add_argument("--n-chan", type=int, default=64)

    p = sub.add_parser("synth", help="generate one patch file")
    p.add_argument("--type", required=True, choices=[t.value for t in SignalType])
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--out", required=True)
    patch_args(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a single configuration")
    d = HyperParams()
    p.add_argument("--backend-label", default=d.backend_label)
    p.add_argument("--workers", type=int, default=d.workers)
    p.add_argument("--channel-mode", choices=["grayscale", "rgb"], default=d.channel_mode)
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--dataset-size", type=int, default=d.dataset_size)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--bottleneck", type=int, choices=[1, 2], default=d.bottleneck)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--out", help="append the run record to this JSONL file (default stdout)")
    patch_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="run a hyperparameter sweep")
    p.add_argument("--space", help="sweep-space JSON (default: shipped grid)")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--max-runs", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--checkpoint-dir")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("validate", help="rank (run, epoch) models by expected ranges")
    p.add_argument("--records", required=True)
    p.add_argument("--spec", help="range-spec JSON (default: shipped ranges)")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("bench", help="throughput map, measured or modeled")
    p.add_argument("--mode", choices=["measured", "modeled"], required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="CSV exports from run records")
    p.add_argument("kind", choices=["parallel-coords", "throughput-map", "prob-matrix"])
    p.add_argument("--records", required=True)
    p.add_argument("--spec")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (SpecificationError, ParseError, DataError, ShapeError, json.JSONDecodeError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
