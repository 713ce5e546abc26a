import os

# Pin BLAS to one thread before numpy loads anywhere, so benchmark slope
# measurements are not distorted by size-dependent thread counts.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
