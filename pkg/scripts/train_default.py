#!/usr/bin/env python3
"""Train the joint variant on the default config and emit metrics + plots.

Equivalent to:

    mardpg train --config configs/ma_rdpg.cfg --out ma_rdpg_out

Outputs: ma_rdpg_out/{metrics.csv, checkpoint.bin, curves.svg, actions.svg}.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

sys.path.insert(0, str(ROOT / "src"))

from mardpg.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(["train",
                   "--config", str(ROOT / "configs" / "ma_rdpg.cfg"),
                   "--out", "ma_rdpg_out"] + sys.argv[1:]))
