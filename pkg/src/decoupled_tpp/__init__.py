"""Marked temporal point processes built from decoupled per-event ODE trajectories.

Each observed event owns an independently propagated hidden-state trajectory;
decoded per-event influences are combined into a ground intensity and a mark
distribution, trained by exact maximum likelihood and validated against a
closed-form multivariate Hawkes oracle.
"""

import os as _os

__version__ = "0.1.0"

# The workload is thousands of small dense blocks; BLAS thread pools lose far
# more to synchronization than they gain on such shapes, so default to one
# thread. Override with DECOUPLED_TPP_BLAS_THREADS=<n> or 'keep'. numpy must
# be imported first so the pool exists before the limit is applied, and the
# limiter object must stay referenced or the limit is rolled back.
_blas_threads = _os.environ.get("DECOUPLED_TPP_BLAS_THREADS", "1")
_BLAS_LIMITER = None
if _blas_threads != "keep":
    try:
        import numpy as _np  # noqa: F401  (loads the BLAS pool)
        import threadpoolctl as _threadpoolctl

        _BLAS_LIMITER = _threadpoolctl.threadpool_limits(int(_blas_threads))
    except (ImportError, ValueError):  # pragma: no cover - env dependent
        pass
