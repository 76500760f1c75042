#!/usr/bin/env python3
"""Paired-seed comparison of all three variants on the default config.

Equivalent to:

    mardpg compare --config configs/ma_rdpg.cfg \
                   --config configs/independent.cfg \
                   --config configs/main_only_ew.cfg \
                   --out comparison_out

Writes comparison_out/comparison.csv and comparison_out/summary.txt.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

sys.path.insert(0, str(ROOT / "src"))

from mardpg.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main([
        "compare",
        "--config", str(ROOT / "configs" / "ma_rdpg.cfg"),
        "--config", str(ROOT / "configs" / "independent.cfg"),
        "--config", str(ROOT / "configs" / "main_only_ew.cfg"),
        "--out", "comparison_out",
    ]))
