"""Train depth 14, bottleneck 2, lr 0.001 on a 1000-patch set and log reference probabilities.

Stops at the first epoch where p_white_noise < 0.1 and p_coherent > 0.9 unless --full is given.
"""
import argparse
import time

from seisbench.records import HyperParams
from seisbench.resnet import ArchSpec, build_model
from seisbench.seeding import derive_seed
from seisbench.synth import PatchSpec, build_dataset, build_reference_set
from seisbench.trainer import INIT_STREAM, DataParallelTrainer, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--patch", type=int, default=32, help="square patch side")
    ap.add_argument("--momentum", type=float, default=0.9)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--full", action="store_true", help="run every epoch")
    args = ap.parse_args()

    hp = HyperParams("cpu", args.workers, "grayscale", 128, 1000, 14, 2, 0.001, args.epochs)
    patch = PatchSpec(args.patch, args.patch)
    ds = build_dataset(hp.dataset_size, 0.5, patch, hp.channel_mode, args.seed).materialize()
    ref = build_reference_set(patch, hp.channel_mode, args.seed)
    model = build_model(ArchSpec(hp.depth, 1, hp.bottleneck), derive_seed(args.seed, INIT_STREAM))
    cfg = TrainConfig(hp.workers, hp.batch, hp.lr, args.momentum, hp.epochs, args.seed)
    print("epoch loss seconds p_wn p_coh p_nc p_sat")
    with DataParallelTrainer(model, cfg) as tr:
        for _ in range(hp.epochs):
            t0 = time.perf_counter()
            st = tr.train_epoch(ds, ref)
            p = st.ref_probs
            print(f"{st.epoch} {st.loss:.4f} {time.perf_counter() - t0:.1f} "
                  + " ".join(f"{v:.4f}" for v in p.as_tuple()), flush=True)
            if not args.full and p.white_noise < 0.1 and p.coherent > 0.9:
                print(f"in range at epoch {st.epoch}")
                break


if __name__ == "__main__":
    main()
