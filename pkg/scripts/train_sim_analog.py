"""Train the toy network on simulated scenes and report calibrated held-out IoU.

Defaults reproduce the frequent-affordance experiment: k=3, frozen encoder,
masked loss, 200 training scenes and 50 held-out scenes at 64x64.

    python scripts/train_sim_analog.py --out runs/analog
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

from affordseg import evalkit, mapgen, refnet, simkit


def run(out_dir, n_train=200, n_val=50, n_test=50, size=64, k=3, epochs=60, batch_size=8,
        lr=1e-3, freeze_encoder=True, seed=0):
    out = Path(out_dir)
    t0 = time.perf_counter()
    sets = {}
    for name, n, base in (("train", n_train, 1000), ("val", n_val, 2000), ("test", n_test, 3000)):
        sets[name] = mapgen.load_manifest(simkit.generate_dataset(n, base + seed, 0.5, size, size, out / name))
    model = refnet.ModelConfig(k=k, seed=seed)
    tc = refnet.TrainConfig(epochs_max=epochs, batch_size=batch_size, encoder_train=not freeze_encoder,
                            lr=lr, seed=seed)
    params, history = refnet.train(model, sets["train"], sets["val"], tc)
    train_preds = refnet.predict(params, sets["train"])
    thresholds = evalkit.threshold_sweep(
        [(q, s.target, s.mask) for q, s in zip(train_preds, sets["train"])]
    )
    counts, valid = 0, 0
    for q, s in zip(refnet.predict(params, sets["test"]), sets["test"]):
        counts = counts + evalkit.confusion_counts(
            evalkit.binarize_target(s.target), evalkit.binarize(q, thresholds), s.mask
        )
        valid += int(s.mask.valid.sum())
    report = evalkit.metrics_from_counts(counts, valid)
    elapsed = time.perf_counter() - t0
    refnet.save_checkpoint(params, out / "model.afpw")
    summary = {
        "model": asdict(model), "train": asdict(tc), "history": history,
        "thresholds": list(thresholds.thresholds), "report": report.to_dict(), "seconds": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return report, history, elapsed


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="runs/analog")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--train-encoder", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    report, history, elapsed = run(args.out, k=args.k, epochs=args.epochs,
                                   freeze_encoder=not args.train_encoder, seed=args.seed)
    print(report.table())
    print(f"{len(history)} epochs, {elapsed:.0f} s")


if __name__ == "__main__":
    main()
