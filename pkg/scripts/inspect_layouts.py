#!/usr/bin/env python3
"""Print attention masks and rotary positions for a few canonical layouts.

Shows the three mask regimes side by side (causal text, blocked generation
holes, full attention inside a conditional image) and how training-mode
positions already sit where the inference layout will put them.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tinymm.cli import main as tinymm  # noqa: E402

LAYOUTS = {
    "interleaved training transcript (two generated images)":
        "text:3,gen:2x2,text:2,gen:2x3",
    "inference-shaped counterpart (first image as condition)":
        "text:3,condvae:2x2,condvit:2x2,text:2,gen:2x3",
    "understanding layout (condition only, no generation)":
        "condvae:2x2,condvit:2x2,text:4",
}


def main() -> None:
    for title, layout in LAYOUTS.items():
        print(f"\n=== {title}\n    layout: {layout}\n")
        tinymm(["inspect-mask", "--layout", layout])

    layout = "text:3,gen:2x2,text:2"
    print(f"\n=== rotary positions, training vs inference\n    layout: {layout}\n")
    for mode in ("training", "inference"):
        print(f"-- mode={mode} (vit grid 2x2)")
        tinymm(["inspect-positions", "--layout", layout, "--mode", mode,
                "--vit-grid", "2x2"])


if __name__ == "__main__":
    main()
