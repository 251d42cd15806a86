"""Throughput over workers x dataset size x batch, from the cost model and optionally measured."""
import argparse
from pathlib import Path

from seisbench.report import (THROUGHPUT_HEADER, best_workers_by_setting, export_throughput_map,
                              measured_cells, modeled_cells, read_csv)
from seisbench.synth import PatchSpec
from seisbench.trainer import ScalingCostModel, describe_speedup, model_throughput, speedup


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/throughput")
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 50_000])
    ap.add_argument("--batches", type=int, nargs="+", default=[128, 512])
    ap.add_argument("--measure", action="store_true", help="also time real training steps")
    ap.add_argument("--patch", type=int, default=16)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cm = ScalingCostModel.default()
    text = export_throughput_map(modeled_cells(cm, args.workers, args.sizes, args.batches))
    (out / "modeled.csv").write_text(text)
    for (n, b), w in sorted(best_workers_by_setting(read_csv(text, THROUGHPUT_HEADER)).items()):
        print(f"modeled best W at N={n}, b={b}: {w}")
    r = speedup(model_throughput(cm, 2, 50_000, 512), model_throughput(cm, 32, 50_000, 512))
    print(f"modeled 2->32 speedup at (50000, 512): {describe_speedup(r)}")
    if args.measure:
        cells = measured_cells(args.workers, args.sizes, args.batches, depth=2,
                               patch=PatchSpec(args.patch, args.patch))
        (out / "measured.csv").write_text(export_throughput_map(cells))
        for c in cells:
            print(f"measured W={c.workers} N={c.dataset_size} b={c.batch}: {c.samples_per_sec:.0f} samples/s")


if __name__ == "__main__":
    main()
