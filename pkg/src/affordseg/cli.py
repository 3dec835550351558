"""Command line entry point: ``affordseg <subcommand> ...``.

Exit codes: 0 success, 1 runtime or data error (one JSON line on stderr),
2 usage error. A ``--config`` JSON file may supply any flag of the chosen
subcommand; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import evalkit, mapgen, refnet, simkit
from .core import (
    AFFORDANCES,
    FormatError,
    RgbRaster,
    atomic_write_bytes,
    atomic_write_text,
    encode_png,
    image_to_uint8,
    load_image,
    load_labels,
    load_tensor,
    save_mask,
    save_tensor,
    affordance_index,
)
from .transfer import TableParseError, load_table, resolve_map

log = logging.getLogger("affordseg")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
OVERLAY_COLORS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    return w, h


# --- subcommands ------------------------------------------------------------------


def cmd_simulate(args) -> None:
    table = load_table(args.table)
    w, h = args.size
    if w < simkit.MIN_VIEW or h < simkit.MIN_VIEW:
        raise UsageError(f"--size must be at least {simkit.MIN_VIEW}x{simkit.MIN_VIEW}")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(args.out)
    with _staging_dir(out) as tmp:
        simkit.generate_dataset(args.count, args.seed, args.room_mix, w, h, tmp, table)
    print(out / "manifest.json")


def cmd_maps(args) -> None:
    table = load_table(args.table)
    try:
        labels = load_labels(args.labels, args.legend)
    except FormatError as exc:
        raise FormatError(f"{args.labels}: {exc.args[0]}", exc.offset) from None
    target, mask = resolve_map(table, labels)
    save_tensor(target, f"{args.out_prefix}.afmt")
    save_mask(mask, f"{args.out_prefix}.afmk")
    print(f"{args.out_prefix}.afmt")
    print(f"{args.out_prefix}.afmk")


def cmd_train(args) -> None:
    train = mapgen.load_manifest(args.train)
    val = mapgen.load_manifest(args.val)
    model = refnet.ModelConfig(k=args.k, depth=args.depth, base_channels=args.base_channels, seed=args.seed)
    tc = refnet.TrainConfig(
        epochs_max=args.epochs, batch_size=args.batch_size, patience=args.patience,
        encoder_train=not args.freeze_encoder, loss_mode="masked" if args.masked else "unmasked",
        lr=args.lr, seed=args.seed,
    )
    params, history = refnet.train(model, train, val, tc)
    history_path = args.history or f"{args.out}.history.json"
    refnet.save_checkpoint(params, args.out)
    atomic_write_text(history_path, json.dumps(history, indent=1) + "\n")
    print(args.out)


def _predict_manifest(ckpt, manifest):
    params = refnet.load_checkpoint(ckpt)
    entries = mapgen.read_manifest(manifest)
    samples = [mapgen.load_sample(e, Path(manifest).parent) for e in entries]
    return entries, samples, refnet.predict(params, samples)


def cmd_threshold(args) -> None:
    _, samples, preds = _predict_manifest(args.ckpt, args.pred)
    grid = np.arange(int(round(1 / args.grid_step)) + 1) * args.grid_step
    grid = np.round(grid, 10)
    ts = evalkit.threshold_sweep([(q, s.target, s.mask) for q, s in zip(preds, samples)], grid)
    atomic_write_text(args.out, ts.to_json() + "\n")
    print(args.out)


def cmd_eval(args) -> None:
    with open(args.thresholds, encoding="utf-8") as f:
        thresholds = evalkit.ThresholdSet.from_json(f.read())
    entries, samples, preds = _predict_manifest(args.ckpt, args.data)
    counts = np.zeros((len(AFFORDANCES), 4), dtype=np.int64)
    valid = 0
    for q, s in zip(preds, samples):
        counts += evalkit.confusion_counts(evalkit.binarize_target(s.target), evalkit.binarize(q, thresholds), s.mask)
        valid += int(s.mask.valid.sum())
    report = evalkit.metrics_from_counts(counts, valid, args.mode)
    out = Path(args.out)
    pred_dir = out.with_name(out.stem + "_pred")
    rows = []
    with _staging_dir(pred_dir) as tmp:
        for i, (q, e) in enumerate(zip(preds, entries)):
            name = f"pred_{i:05d}.afmt"
            save_tensor(np.clip(q, 0.0, 1.0).astype(np.float32), Path(tmp) / name)
            rows.append({"source_id": e["source_id"],
                         "image": os.path.relpath(Path(args.data).parent / e["image"], out.parent),
                         "prediction": os.path.relpath(pred_dir / name, out.parent)})
    doc = report.to_dict()
    doc["thresholds"] = list(thresholds.thresholds)
    doc["samples"] = rows
    atomic_write_text(out, json.dumps(doc, indent=1) + "\n")
    print(report.table())


def overlay(image: RgbRaster, probs: np.ndarray, channels) -> np.ndarray:
    """Dimmed image plus one primary color per chosen channel, scaled by probability.

    Co-occurring affordances add up (red + green reads as yellow); the sum is clamped.
    """
    base = image.data * 0.4
    idx = [affordance_index(c) for c in channels]
    color = np.einsum("khw,kc->hwc", probs[idx], OVERLAY_COLORS[: len(idx)])
    return np.clip(base + color, 0.0, 1.0)


def cmd_report(args) -> None:
    eval_path = Path(args.eval)
    with open(eval_path, encoding="utf-8") as f:
        doc = json.load(f)
    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    if not 1 <= len(channels) <= 3:
        raise UsageError("--channels takes one to three affordance names")
    for c in channels:
        try:
            affordance_index(c)
        except KeyError:
            raise UsageError(f"unknown affordance {c!r} in --channels") from None
    out = Path(args.overlay_out)
    with _staging_dir(out) as tmp:
        for i, row in enumerate(doc.get("samples", [])):
            image = load_image(eval_path.parent / row["image"])
            probs = load_tensor(eval_path.parent / row["prediction"]).values
            pixels = overlay(image, probs, channels)
            atomic_write_bytes(Path(tmp) / f"overlay_{i:05d}.png", encode_png(image_to_uint8(RgbRaster(pixels))))
    print(f"{'affordance':<14}{'IoU':>8}")
    for row in doc["affordances"]:
        print(f"{row['affordance']:<14}{row['iou']:>8.3f}")
    print(f"{'mean':<14}{doc['mean_iou']:>8.3f}")


class _staging_dir:
    """Build a directory under a temporary name and move it into place on success."""

    def __init__(self, final):
        self.final = Path(final)

    def __enter__(self):
        if self.final.is_dir() and any(self.final.iterdir()) and not (
            (self.final / "manifest.json").exists() or self.final.name.endswith("_pred")
            or any(self.final.glob("overlay_*.png"))
        ):
            raise OSError(f"refusing to replace non-empty directory {self.final} that this tool did not write")
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=self.final.parent, prefix=f".{self.final.name}."))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.final.exists():
            shutil.rmtree(self.final)
        os.replace(self.tmp, self.final)
        return False


# --- argument parsing -------------------------------------------------------------

REQUIRED = {
    "simulate": ("table", "out"),
    "maps": ("labels", "legend", "table", "out_prefix"),
    "train": ("train", "val", "out"),
    "threshold": ("pred", "ckpt", "out"),
    "eval": ("ckpt", "data", "thresholds", "out"),
    "report": ("eval", "overlay_out"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affordseg", description="Dense affordance maps: simulate, train, evaluate.")
    p.add_argument("--config", help="JSON file with flag values; command-line flags win")
    p.add_argument("--log-level", choices=sorted(LOG_LEVELS), help="overrides $AFFORD_LOG")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a simulated dataset")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(64, 64), help="WxH")
    s.add_argument("--room-mix", type=float, default=0.5, help="fraction of kitchens")
    s.add_argument("--table")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("maps", help="part labels to affordance tensor and coverage mask")
    s.add_argument("--labels")
    s.add_argument("--legend")
    s.add_argument("--table")
    s.add_argument("--out-prefix")
    s.set_defaults(func=cmd_maps)

    s = sub.add_parser("train", help="train the refinement network")
    s.add_argument("--train")
    s.add_argument("--val")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--base-channels", type=int, default=8)
    s.add_argument("--masked", type=_bool, default=True)
    s.add_argument("--freeze-encoder", type=_bool, default=False)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--patience", type=int, default=5)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--history", help="history JSON path (default: <out>.history.json)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("threshold", help="calibrate per-affordance thresholds")
    s.add_argument("--pred", help="manifest to calibrate on (normally the simulated training set)")
    s.add_argument("--ckpt")
    s.add_argument("--grid-step", type=float, default=0.01)
    s.add_argument("--out")
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("eval", help="metrics report for a checkpoint on a dataset")
    s.add_argument("--ckpt")
    s.add_argument("--data")
    s.add_argument("--thresholds")
    s.add_argument("--mode", choices=evalkit.MODES, default="standard")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="per-affordance table and probability overlays")
    s.add_argument("--eval")
    s.add_argument("--overlay-out")
    s.add_argument("--channels", default="place-on,walk,grasp", help="up to three affordances shown as R,G,B")
    s.set_defaults(func=cmd_report)
    return p


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read --config: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        bad = [k for k in overrides if k.replace("-", "_") not in known]
        if bad:
            parser.error(f"unknown keys in --config: {bad}")
        defaults = {}
        for key, value in overrides.items():
            action = known[key.replace("-", "_")]
            defaults[action.dest] = action.type(value) if action.type and isinstance(value, str) else value
        if "size" in defaults and isinstance(defaults["size"], list):
            defaults["size"] = tuple(defaults["size"])
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) in (None, "")]
    if missing:
        parser._subparsers._group_actions[0].choices[args.command].error(
            "missing required flags: " + ", ".join("--" + m.replace("_", "-") for m in missing)
        )
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    level = args.log_level or os.environ.get("AFFORD_LOG", "warn")
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"affordseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, TableParseError, FormatError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        for attr in ("filename", "offset", "line", "source"):
            v = getattr(exc, attr, None)
            if v is not None:
                err[attr] = v if isinstance(v, (int, str)) else str(v)
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
