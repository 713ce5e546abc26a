#!/usr/bin/env python3
"""Run the default scaling sweep and write scaling.csv.

Equivalent to:
    lbla-bench --lengths 512,1024,2048,4096,8192 \
               --kinds softmax,lbla-sigmoid --repeats 5 --out scaling.csv
"""

import os
import sys

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

from lbla.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main([
        "--lengths", "512,1024,2048,4096,8192",
        "--kinds", "softmax,lbla-sigmoid",
        "--repeats", "5",
        "--out", "scaling.csv",
    ] + sys.argv[1:]))
