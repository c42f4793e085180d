"""Generate the default dataset, train the default network and print validation metrics.

    python3 scripts/train_default.py --out runs/default
"""

import argparse
import json
import logging
import time
from pathlib import Path

from contact_quality.model import (
    GridDataset, NetConfig, TrainConfig, build, evaluate, save_weights, train,
)
from contact_quality.synthgen import build_dataset


def to_dataset(samples):
    return GridDataset.from_inputs([s.input for s in samples], [s.label for s in samples],
                                   [s.band for s in samples], [s.id for s in samples])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--head", choices=("softmax", "sigmoid"), default="softmax")
    ap.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    t0 = time.perf_counter()
    manifest = build_dataset(seed=args.seed, out_dir=args.out / "data")
    t_gen = time.perf_counter() - t0
    train_set, val_set = to_dataset(manifest.split("train")), to_dataset(manifest.split("validation"))
    print(f"generated {len(manifest.entries)} samples in {t_gen:.1f}s "
          f"({len(train_set)} train / {len(val_set)} validation)")

    net = build(NetConfig(head=args.head, seed=args.seed))
    t0 = time.perf_counter()
    net, history = train(net, train_set, val_set, TrainConfig(seed=args.seed, epochs=args.epochs),
                         on_epoch=lambda r: print(
                             f"epoch {r.epoch:3d} train {r.train_loss:.4f} val {r.val_loss:.4f} "
                             f"acc {r.val_acc:.3f} lr {r.lr:.1e}"))
    t_train = time.perf_counter() - t0
    digest = save_weights(net, args.out / "weights.json")
    metrics = evaluate(net, val_set)
    summary = {"epochs_run": len(history), "train_seconds": t_train, "weights_sha256": digest,
               "validation": metrics}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"trained {len(history)} epochs in {t_train / 60:.1f} min; "
          f"val acc {metrics['accuracy']:.3f}, in-band {metrics['in_band_rate']:.3f}")


if __name__ == "__main__":
    main()
