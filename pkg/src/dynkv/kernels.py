"""Dense numeric kernels shared by the toy model, the baselines and the allocator.

Everything here is a pure function over numpy arrays, float32 in / float32 out,
with deterministic tie handling (lowest index wins) so that golden tests and
cross-policy comparisons are exactly reproducible.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter1d


def softmax_rows(m: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``m * scale``, stabilized by max subtraction.

    Works on any array; the softmax is taken over the last axis. Rows of the
    result sum to 1 within 1e-6.
    """
    arr = np.asarray(m, dtype=np.float32)
    if arr.size == 0:
        raise ValueError("empty input")
    z = arr.astype(np.float64) * scale
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out.astype(np.float32)


def pool1d_max(v: np.ndarray, kernel: int) -> np.ndarray:
    """Sliding max over the last axis, stride 1, window clipped at the edges.

    Output has the same length as the input; ``kernel`` must be odd and >= 1.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("invalid kernel")
    arr = np.asarray(v, dtype=np.float32)
    if kernel == 1:
        return arr.copy()
    # 'nearest' edge replication is equivalent to clipping the window for max
    return maximum_filter1d(arr, size=kernel, axis=-1, mode="nearest")


def top_k_indices(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, sorted ascending by index.

    Ties are broken toward the lower index.
    """
    arr = np.asarray(v)
    if k > arr.shape[-1]:
        raise ValueError("k exceeds length")
    return np.sort(rank_desc(arr, k))


def rank_desc(v: np.ndarray, k: int | None = None) -> np.ndarray:
    """Indices of a 1-D vector ordered by descending value, lowest index first
    among ties; truncated to the top k when given."""
    arr = np.asarray(v)
    order = np.argsort(-arr, kind="stable")
    if k is not None:
        order = order[:k]
    return order
