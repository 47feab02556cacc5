"""Hot sampler kernels with a selectable backend.

The numba backend is used when numba imports cleanly. Setting the
environment variable ``CMBVS_DISABLE_NUMBA=1`` before import forces the
pure-numpy path; both backends expose the same functions and consume random
variates identically.
"""

import os
import warnings

from . import _vectorized as numpy_backend

KERNEL_NAMES = (
    "k_step",
    "shift_loglik",
    "apply_shift",
    "alpha_step",
    "dm_add_delete",
    "dm_refresh",
    "balances",
)


def _numba_disabled():
    return os.environ.get("CMBVS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def load_numba_backend():
    """Import the compiled backend; raises ImportError when numba is missing."""
    from . import _jit
    return _jit


if _numba_disabled():
    BACKEND = "numpy"
    _impl = numpy_backend
else:
    try:
        _impl = load_numba_backend()
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        warnings.warn("numba unavailable; using the pure-numpy kernels", RuntimeWarning)
        BACKEND = "numpy"
        _impl = numpy_backend

k_step = _impl.k_step
shift_loglik = _impl.shift_loglik
apply_shift = _impl.apply_shift
alpha_step = _impl.alpha_step
dm_add_delete = _impl.dm_add_delete
dm_refresh = _impl.dm_refresh
balances = _impl.balances

__all__ = ["BACKEND", "KERNEL_NAMES", "load_numba_backend", "numpy_backend", *KERNEL_NAMES]
