"""Pure numpy versions of the per-cell kernels in ``_kernels.pyx``.

Both implementations consume the same pre-drawn random arrays, so they
return identical results for identical inputs.
"""

import numpy as np


def ztp_sizes(u, cdf):
    """Inverse-transform draws from a truncated pmf tabulated as ``cdf``.

    ``cdf[j]`` is P(size <= j + 1); the result is the smallest size whose
    CDF is strictly above ``u``.  Uniforms past the tabulated tail map to the
    last size.
    """
    idx = np.searchsorted(cdf, u, side="right")
    np.minimum(idx, len(cdf) - 1, out=idx)
    return (idx + 1).astype(np.int64)


def target_flags(sizes, types):
    """True for cells carrying at least one construct of type 0 (the target)."""
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return np.logical_or.reduceat(types == 0, starts)


def weighted_type_counts(sizes, types, weights, r):
    """``X_i = sum_k N_{k,i} * weights[k]`` for constructs listed cell by cell."""
    per_construct = np.repeat(weights.astype(np.int64), sizes)
    return np.bincount(types, weights=per_construct, minlength=r).astype(np.int64)
