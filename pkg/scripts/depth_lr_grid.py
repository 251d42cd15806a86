"""Sweep depth x learning rate and write run records plus the probability matrix CSV.

Defaults are sized for a laptop; raise --patch, --dataset-size and --epochs for a fuller grid.
"""
import argparse
from pathlib import Path

from seisbench.records import load_records
from seisbench.report import export_prob_matrix
from seisbench.selection import rank_models
from seisbench.sweep import parse_space, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/depth_lr")
    ap.add_argument("--depths", type=int, nargs="+", default=[2, 4, 8, 14, 22, 32])
    ap.add_argument("--lrs", type=float, nargs="+", default=[0.001, 0.005, 0.01, 0.05, 0.1, 0.5])
    ap.add_argument("--patch", type=int, default=16)
    ap.add_argument("--dataset-size", type=int, default=256)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--momentum", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"seed": args.seed, "momentum": args.momentum,
           "patch": {"n_time": args.patch, "n_chan": args.patch},
           "axes": {"backend_label": ["cpu"], "workers": [1], "channel_mode": ["grayscale"],
                    "batch": [128], "dataset_size": [args.dataset_size], "depth": args.depths,
                    "bottleneck": [2], "lr": args.lrs, "epochs": [args.epochs]}}
    records_path = out / "runs.jsonl"
    summary = run_sweep(parse_space(doc), records_path, resume=args.resume)
    print(f"trained {summary.trained}, skipped {summary.skipped}")
    records = load_records(records_path, strict=True)
    (out / "prob_matrix.csv").write_text(export_prob_matrix(records))
    print(rank_models(records).summary())


if __name__ == "__main__":
    main()
