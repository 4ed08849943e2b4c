#!/usr/bin/env python3
"""Regenerate data/plasma_lut.csv and src/plasma_lut.inc from matplotlib."""
import pathlib

import matplotlib

root = pathlib.Path(__file__).resolve().parent.parent
cmap = matplotlib.colormaps["plasma"]
rows = [tuple(round(255 * c) for c in cmap(i / 255)[:3]) for i in range(256)]

with open(root / "data" / "plasma_lut.csv", "w") as f:
    f.write("index,r,g,b\n")
    for i, (r, g, b) in enumerate(rows):
        f.write(f"{i},{r},{g},{b}\n")

with open(root / "src" / "plasma_lut.inc", "w") as f:
    f.write("// Generated from data/plasma_lut.csv: 256 RGB entries, index = round(255 * value).\n")
    for i in range(0, 256, 4):
        f.write("    " + " ".join(f"{{{r}, {g}, {b}}}," for r, g, b in rows[i:i + 4]) + "\n")
