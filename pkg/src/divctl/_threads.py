"""Worker-count control through the ``DIVCTL_THREADS`` environment variable.

Imported by the package ``__init__`` before anything touches numba, so the
numba thread pool can be sized from the variable.
"""

from __future__ import annotations

import os
import sys

ENV_VAR = "DIVCTL_THREADS"


def requested_threads() -> int | None:
    raw = os.environ.get(ENV_VAR, "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


def preconfigure() -> None:
    if "numba" in sys.modules:
        return
    # the bundled TBB is too old for numba; OpenMP is deterministic enough for disjoint writes
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    n = requested_threads()
    if n is not None:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(max(n, os.cpu_count() or 1)))


def apply() -> int:
    """Cap the numba pool at ``DIVCTL_THREADS``; returns the active worker count."""
    import numba

    n = requested_threads()
    limit = numba.config.NUMBA_NUM_THREADS
    if n is not None:
        numba.set_num_threads(min(n, limit))
    return numba.get_num_threads()
