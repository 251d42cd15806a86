"""Rank (run, epoch) models in a records file against the expected reference ranges."""
import argparse

from seisbench.records import load_records
from seisbench.selection import ExpectedRangeSpec, rank_models


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("records")
    ap.add_argument("--spec", help="range-spec JSON (default: shipped ranges)")
    ap.add_argument("--top", type=int, default=10)
    args = ap.parse_args()

    ranking = rank_models(load_records(args.records), ExpectedRangeSpec.load(args.spec))
    for c in ranking.candidates[:args.top]:
        p = " ".join(f"{chk.p:.4f}" for chk in c.report.checks)
        print(f"{c.run_id} epoch {c.epoch:3d} distance {c.report.distance:.4f}  {p}")
    print(ranking.summary())


if __name__ == "__main__":
    main()
