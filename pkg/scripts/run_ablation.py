#!/usr/bin/env python3
"""Run the structural ablation matrix in strict mode (exit 1 on deviation)."""

import sys

from lbla.cli import main

if __name__ == "__main__":
    sys.exit(main(["--ablation", "--strict"] + sys.argv[1:]))
