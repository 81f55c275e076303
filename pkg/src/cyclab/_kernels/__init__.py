"""Hot-kernel backend selection.

Imports the compiled extension when present, falling back to the pure-Python
implementations. Set CYCLAB_PURE=1 to force the fallback (used by tests and
the backend benchmark).
"""

import os

if os.environ.get("CYCLAB_PURE") == "1":
    from cyclab._kernels.fallback import *  # noqa: F401,F403
else:
    try:
        from cyclab._kernels._core import *  # noqa: F401,F403
    except ImportError:
        from cyclab._kernels.fallback import *  # noqa: F401,F403

__all__ = [
    "BACKEND",
    "checksum_row",
    "pid_step",
    "plant_step",
    "try_read_cycle",
    "stress_reads",
]
