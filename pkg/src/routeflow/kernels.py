"""Kernel backend selection.

Imports the compiled extension when it is available and falls back to
the pure Python implementation otherwise.  Setting the environment
variable ``ROUTEFLOW_PURE=1`` before import forces the fallback, which
is handy for benchmarking and for debugging the compiled code against
its reference.

Both backends expose the same functions with identical semantics, down
to the random draw sequence; ``BACKEND`` records which one is active
("c" or "python").
"""

from __future__ import annotations

import os

if os.environ.get("ROUTEFLOW_PURE") == "1":
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "c"
    except ImportError:
        from . import _kernels_py as _impl  # type: ignore[no-redef]

        BACKEND = "python"

PROPOSAL_UNIFORM = _impl.PROPOSAL_UNIFORM
PROPOSAL_GIBBS = _impl.PROPOSAL_GIBBS
run_sweeps = _impl.run_sweeps
tu_scan = _impl.tu_scan

__all__ = [
    "BACKEND",
    "PROPOSAL_UNIFORM",
    "PROPOSAL_GIBBS",
    "run_sweeps",
    "tu_scan",
]
