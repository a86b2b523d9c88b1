"""Shared test configuration.

The sandbox exposes 2 CPUs; OpenBLAS's default thread pool oversubscribes it
badly (20x slowdowns on repeated small matmuls), so the whole suite runs with
BLAS pinned to one thread.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

try:
    import threadpoolctl

    threadpoolctl.threadpool_limits(1)
except ImportError:  # pragma: no cover
    pass
