#!/usr/bin/env python3
"""Run the dense-sampling oscillator sweep (extra CLI flags pass through)."""
import sys
from pathlib import Path

from eigenode.cli import main

PRESET = Path(__file__).resolve().parent.parent / "configs" / "oscillator.toml"

if __name__ == "__main__":
    sys.exit(main(["run", str(PRESET), "--threads", "2", *sys.argv[1:]]))
