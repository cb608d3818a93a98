"""Kernel selection.

The compiled extension is used when importable; otherwise the numpy
fallback. Set ``SPECTRUMCHAIN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"

if os.environ.get("SPECTRUMCHAIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import aggregate_mw, pairwise_rx_dbm  # noqa: F401
        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    aggregate_mw = _fallback.aggregate_mw
    pairwise_rx_dbm = _fallback.pairwise_rx_dbm

__all__ = ["BACKEND", "aggregate_mw", "pairwise_rx_dbm"]
