"""Select the compiled per-cell kernels when built, else the numpy fallback.

Set ``SCREENOPT_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("SCREENOPT_PURE_PYTHON", "") not in ("", "0"):
    from ._fallback import target_flags, weighted_type_counts, ztp_sizes
    BACKEND = "python"
else:
    try:
        from ._kernels import target_flags, weighted_type_counts, ztp_sizes
        BACKEND = "cython"
    except ImportError:
        from ._fallback import target_flags, weighted_type_counts, ztp_sizes
        BACKEND = "python"

__all__ = ["BACKEND", "target_flags", "weighted_type_counts", "ztp_sizes"]
