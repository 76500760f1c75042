#!/usr/bin/env python3
"""Certify the constructed cooperation gap, then show it vanish at kappa=0.

The first call must exit 0 (gap > 3 Monte-Carlo standard errors); the
second must exit 1 (no certified gap once the navigation coupling is off).
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

sys.path.insert(0, str(ROOT / "src"))

from mardpg.cli import main  # noqa: E402

if __name__ == "__main__":
    print("== default coupling ==")
    rc_on = main(["certify-gap",
                  "--config", str(ROOT / "configs" / "certify_gap.cfg")])
    print("\n== kappa = 0 ablation ==")
    rc_off = main(["certify-gap",
                   "--config", str(ROOT / "configs" / "certify_gap_kappa0.cfg")])
    ok = rc_on == 0 and rc_off == 1
    print(f"\ncertification {'PASSED' if ok else 'FAILED'}")
    sys.exit(0 if ok else 1)
