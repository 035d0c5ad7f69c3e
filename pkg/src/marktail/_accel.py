"""Backend switch for the compiled kernels.

Every hot loop in the package exists twice: a numba ``njit`` version
written as scalar loops and a vectorised numpy version.  The numba path is
used when numba imports cleanly and ``MARKTAIL_DISABLE_NUMBA`` is unset
(or set to ``0``/``false``).  Callers can still request a backend
explicitly, which is what the tests and the benchmark do.
"""
import os

_FLAG = os.environ.get("MARKTAIL_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
    HAS_NUMBA = True
    # the bundled TBB is too old for numba; skip it rather than warn
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA and not _DISABLED
BACKENDS = ("numba", "numpy")


def default_backend():
    return "numba" if NUMBA_ENABLED else "numpy"


def resolve_backend(backend=None):
    """Return a concrete backend name, falling back to numpy if needed."""
    if backend is None:
        return default_backend()
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if backend == "numba" and not HAS_NUMBA:
        return "numpy"
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    Compilation is lazy, so importing a module with decorated kernels is
    cheap even when the numpy backend is selected.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


prange = numba.prange if HAS_NUMBA else range
