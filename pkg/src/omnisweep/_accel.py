"""Acceleration layer: numba-jitted kernels with a pure-numpy fallback.

The active path is chosen once at import time from the ``OMNISWEEP_NUMBA``
environment variable: "0"/"off" forces the numpy fallback, "1"/"on" requires
numba (import error if it is missing), anything else autodetects.

Worker counts map onto numba's thread pool; the numpy path is single
threaded and ignores them. Results are required to be identical for any
worker count, which holds because every parallel kernel writes disjoint
output cells.
"""

import os

_FLAG = os.environ.get("OMNISWEEP_NUMBA", "auto").strip().lower()

numba = None
NUMBA_ENABLED = False

if _FLAG not in ("0", "false", "off"):
    # Allow worker counts beyond the core count; must be set before numba
    # initializes its thread pool.
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        if _FLAG in ("1", "true", "on"):
            raise
        numba = None
        NUMBA_ENABLED = False


def resolve_workers(workers=None):
    """Pick the worker count: explicit arg, else OMNISWEEP_WORKERS, else 1."""
    if workers is None:
        workers = os.environ.get("OMNISWEEP_WORKERS", "1")
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def set_workers(workers):
    """Apply a worker count to the numba thread pool (no-op on numpy path)."""
    workers = resolve_workers(workers)
    if NUMBA_ENABLED:
        limit = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(min(workers, limit))
    return workers


def get_kernels():
    """Return the active kernel module (numba-jitted or numpy fallback)."""
    if NUMBA_ENABLED:
        from . import _kernels_numba

        return _kernels_numba
    from . import _kernels_numpy

    return _kernels_numpy
