"""Numba availability and the switch between JIT kernels and numpy fallbacks.

Set ``VSEG_DISABLE_NUMBA=1`` to force the pure-numpy path. ``VSEG_THREADS``
caps the number of threads used by numba and BLAS.
"""
import os

_TRUTHY = {"1", "true", "yes", "on"}

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # skip probing the TBB layer; older system TBB builds only emit a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def numba_enabled():
    flag = os.environ.get("VSEG_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in _TRUTHY


def apply_thread_cap():
    """Honour ``VSEG_THREADS`` for numba and BLAS pools. Returns the cap or None."""
    raw = os.environ.get("VSEG_THREADS")
    if not raw:
        return None
    n = max(1, int(raw))
    if HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        pass
    else:
        threadpool_limits(limits=n)
    return n
