"""Render a few simulated scenes side by side with three affordance channels.

    python scripts/simulate_demo.py --out demo.png --count 4
"""
from __future__ import annotations

import argparse

import numpy as np

from affordseg.cli import overlay
from affordseg.core import RgbRaster, save_image
from affordseg.simkit import render_affordance_pass, room_for, sample_scene
from affordseg.transfer import bundled_table


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="demo.png")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--channels", default="place-on,walk,grasp")
    args = p.parse_args()
    table = bundled_table()
    channels = args.channels.split(",")
    rows = []
    for i in range(args.count):
        s = args.seed ^ i
        sample = render_affordance_pass(sample_scene(s, room_for(s, 0.5)), table, args.size, args.size)
        maps = overlay(sample.image, np.asarray(sample.target.values, dtype=np.float64), channels)
        rows.append(np.concatenate([sample.image.data, maps], axis=1))
    save_image(RgbRaster(np.concatenate(rows, axis=0)), args.out)
    print(args.out)


if __name__ == "__main__":
    main()
