"""Writer for the KVTRACE1 binary attention-trace format.

Layout (little-endian throughout):

    magic   8 bytes   b"KVTRACE1"
    L, H, S, ws       4x uint32
    label             uint32 byte length + UTF-8 bytes
    needles           uint32 count + that many uint32 positions
    scores            L*H*S float32 values, layer-major then head then position

This is an independent implementation of the byte contract; the consumer
side validates it on read.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"KVTRACE1"


def encode_trace(
    scores: np.ndarray,
    ws: int,
    label: str = "",
    needle_positions: tuple[int, ...] = (),
) -> bytes:
    """Serialize an [L, H, S] float score array to KVTRACE1 bytes."""
    arr = np.asarray(scores, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError("scores must be a 3-d [L, H, S] array")
    L, H, S = arr.shape
    if min(L, H, S) < 1:
        raise ValueError("scores must be non-empty in every dimension")
    if not 1 <= ws < S:
        raise ValueError("ws must satisfy 1 <= ws < S")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite and non-negative")
    for p in needle_positions:
        if not 0 <= p < S:
            raise ValueError("needle position out of range")

    label_bytes = label.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<4I", L, H, S, ws),
        struct.pack("<I", len(label_bytes)),
        label_bytes,
        struct.pack("<I", len(needle_positions)),
        struct.pack(f"<{len(needle_positions)}I", *needle_positions),
        arr.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def write_trace_file(
    path: str,
    scores: np.ndarray,
    ws: int,
    label: str = "",
    needle_positions: tuple[int, ...] = (),
) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_trace(scores, ws, label, needle_positions))
