"""Numba acceleration gate.

Every hot kernel in :mod:`latentdrive.kernels` exists twice: a scalar-loop
version compiled with ``numba.njit`` and a vectorized pure-numpy version.
The environment variable ``LATENTDRIVE_DISABLE_NUMBA`` (``1``/``true``/
``yes``) selects the numpy path; it is also selected automatically when
numba is not importable.  ``bench/bench_kernels.py`` times both paths.
"""

import os


def _numba_enabled() -> bool:
    flag = os.environ.get("LATENTDRIVE_DISABLE_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _numba_enabled()

if USE_NUMBA:
    import numba

    def jit_kernel(fn):
        # fastmath off: kernel results must not depend on the backend
        return numba.njit(cache=True, fastmath=False)(fn)

else:

    def jit_kernel(fn):
        return fn
