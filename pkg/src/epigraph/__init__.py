"""Graph-attention + transformer forecasting for weekly surveillance series."""

import os

# Single-threaded BLAS: the model's matrices are small enough that thread
# fan-out costs more than it saves, and run-level parallelism (independent
# seeds) already uses the cores. The env vars only work if numpy is not yet
# loaded; threadpoolctl covers the case where it is.
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

try:
    import threadpoolctl as _threadpoolctl

    _blas_limiter = _threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - best effort
    _blas_limiter = None

__version__ = "0.1.0"
