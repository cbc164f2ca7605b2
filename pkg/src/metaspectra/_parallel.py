"""Thread-count policy for embarrassingly parallel stages."""

from __future__ import annotations

import os

ENV_VAR = "METASPECTRA_THREADS"


def worker_count() -> int:
    """Worker cap: METASPECTRA_THREADS when set, else 1 (deterministic default).

    Values are clamped to [1, cpu count]; unparsable settings fall back to 1.
    """
    raw = os.environ.get(ENV_VAR)
    if raw is None:
        return 1
    try:
        requested = int(raw)
    except ValueError:
        return 1
    ncpu = os.cpu_count() or 1
    return max(1, min(requested, ncpu))
