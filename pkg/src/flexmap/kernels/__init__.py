"""Branch-flow kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from ``FLEXMAP_NUMBA``:
``0``/``false``/``off`` forces numpy, anything else uses numba when it
imports.  Both backends stay importable for benchmarks and tests via
:func:`get_backend`.
"""
import importlib
import logging
import os

log = logging.getLogger(__name__)

_NAMES = ("branch_flows", "branch_jac", "branch_hess", "dense_pf")


def _wanted():
    flag = os.environ.get("FLEXMAP_NUMBA", "1").strip().lower()
    return "numpy" if flag in ("0", "false", "off", "no", "numpy") else "numba"


def get_backend(name: str):
    """Return the kernel module for ``"numpy"`` or ``"numba"``."""
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"{__name__}._{name}")


try:
    _impl = get_backend(_wanted())
except ImportError:  # numba missing or broken
    log.warning("numba unavailable, using numpy kernels")
    _impl = get_backend("numpy")

BACKEND = _impl.__name__.rsplit("_", 1)[-1]
branch_flows = _impl.branch_flows
branch_jac = _impl.branch_jac
branch_hess = _impl.branch_hess
dense_pf = _impl.dense_pf

__all__ = ["BACKEND", "get_backend", *_NAMES]
