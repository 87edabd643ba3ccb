"""Worker-thread control.

Results must not depend on the thread count, so this module only bounds how
much parallelism the compiled kernels may use. Every kernel parallelizes over
independent output elements; no reduction is ever split across threads.
"""

import os

# Pick a threading layer before numba is imported anywhere. The default probe
# order tries TBB first and warns when it is absent; workqueue is always built.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba

_MAX = numba.config.NUMBA_NUM_THREADS
_requested = 1
_effective = 1
numba.set_num_threads(1)


def set_threads(n: int) -> int:
    """Request n worker threads; returns the effective count.

    The request is clamped to [1, host limit]. Both the requested and the
    effective value are kept for run manifests.
    """
    global _requested, _effective
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _requested = n
    _effective = min(n, _MAX)
    numba.set_num_threads(_effective)
    return _effective


def get_threads() -> tuple[int, int]:
    """Return (requested, effective) thread counts."""
    return _requested, _effective
