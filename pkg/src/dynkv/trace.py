"""The KVTRACE1 binary attention-trace format and synthetic trace generators.

A trace holds, per layer and head, the pooled window-attention score of every
key position in a prefix: exactly the quantity the budget allocator consumes.
Layout (all integers 32-bit little-endian unsigned):

    magic   8 bytes  b"KVTRACE1"
    L, H, S, ws      4 x uint32
    label   uint32 byte-length + UTF-8 bytes
    needles uint32 count + count x uint32 position
    scores  L*H*S float32, layer-major

The format is the contract shared with external exporters; round-trips must
be bit-exact.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .kernels import pool1d_max

MAGIC = b"KVTRACE1"

PROFILES = ("uniform", "early-heavy", "late-heavy", "wave", "needle-at")


class TraceError(ValueError):
    """Raised for malformed, truncated or foreign trace bytes."""


@dataclass
class AttentionTrace:
    L: int
    H: int
    S: int
    ws: int
    label: str = ""
    needle_positions: list[int] = field(default_factory=list)
    scores: np.ndarray = None  # [L, H, S] float32, non-negative

    def validate(self) -> None:
        if self.scores is None or self.scores.shape != (self.L, self.H, self.S):
            raise TraceError("malformed trace: score shape")
        if self.scores.dtype != np.float32:
            raise TraceError("malformed trace: score dtype")
        if not np.all(np.isfinite(self.scores)) or np.any(self.scores < 0):
            raise TraceError("malformed trace: scores must be finite and non-negative")
        if any(p < 0 or p >= self.S for p in self.needle_positions):
            raise TraceError("malformed trace: needle position out of range")
        if min(self.L, self.H, self.S) < 1 or self.ws < 1 or self.ws > self.S:
            raise TraceError("malformed trace: bad dimensions")


def write_trace(t: AttentionTrace, sink) -> int:
    """Serialize a trace; returns the number of bytes written."""
    t.validate()
    label = t.label.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<4I", t.L, t.H, t.S, t.ws),
        struct.pack("<I", len(label)), label,
        struct.pack("<I", len(t.needle_positions)),
        struct.pack(f"<{len(t.needle_positions)}I", *t.needle_positions),
        np.ascontiguousarray(t.scores, dtype="<f4").tobytes(),
    ]
    n = 0
    for p in parts:
        sink.write(p)
        n += len(p)
    return n


def _take(buf: io.BufferedIOBase, n: int) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise TraceError("truncated")
    return b


def read_trace(source) -> AttentionTrace:
    """Parse a trace, validating every invariant of the format."""
    if _take(source, 8) != MAGIC:
        raise TraceError("not a trace file")
    L, H, S, ws = struct.unpack("<4I", _take(source, 16))
    (label_len,) = struct.unpack("<I", _take(source, 4))
    label = _take(source, label_len).decode("utf-8")
    (n_needle,) = struct.unpack("<I", _take(source, 4))
    needles = list(struct.unpack(f"<{n_needle}I", _take(source, 4 * n_needle)))
    raw = _take(source, 4 * L * H * S)
    scores = np.frombuffer(raw, dtype="<f4").reshape(L, H, S).astype(np.float32)
    t = AttentionTrace(L=L, H=H, S=S, ws=ws, label=label,
                       needle_positions=needles, scores=scores)
    t.validate()
    return t


def write_trace_file(t: AttentionTrace, path) -> int:
    with open(path, "wb") as f:
        return write_trace(t, f)


def read_trace_file(path) -> AttentionTrace:
    with open(path, "rb") as f:
        return read_trace(f)


def parse_profile(profile: str):
    """Split a profile spec like "needle-at:10:0.9" into (name, args)."""
    parts = str(profile).split(":")
    name = parts[0]
    if name not in PROFILES:
        raise ValueError(f"unknown profile: {name!r}")
    if name == "needle-at":
        if len(parts) != 3:
            raise ValueError("unknown profile: needle-at expects needle-at:<pos>:<mass>")
        return name, (int(parts[1]), float(parts[2]))
    if len(parts) != 1:
        raise ValueError(f"unknown profile: {profile!r}")
    return name, ()


def synth_trace(L: int, H: int, S: int, ws: int, profile: str, seed: int = 0,
                label: str | None = None) -> AttentionTrace:
    """Generate a deterministic synthetic trace with a controlled per-layer
    score-mass shape.

    Profiles: "uniform" (identical constant everywhere), "early-heavy" /
    "late-heavy" / "wave" (per-layer total mass follows the named shape
    exactly, by construction), "needle-at:<pos>:<mass>" (fraction ``mass`` of
    each head's score concentrated at one position, recorded in
    ``needle_positions``).
    """
    if S <= ws:
        raise ValueError("S must exceed ws")
    name, args = parse_profile(profile)
    rng = np.random.default_rng(seed)
    needles: list[int] = []

    if name == "uniform":
        scores = np.full((L, H, S), 1.0, dtype=np.float32)
    elif name == "needle-at":
        p, mass = args
        if not (0 <= p < S):
            raise ValueError("needle position out of range")
        base = rng.random((L, H, S))
        base *= (1.0 - mass) / base.sum(axis=-1, keepdims=True)
        base[:, :, p] += mass
        scores = base.astype(np.float32)
        needles = [p]
    else:
        l_idx = np.arange(L)
        if name == "early-heavy":
            weight = np.exp(-0.25 * l_idx)
        elif name == "late-heavy":
            weight = np.exp(-0.25 * (L - 1 - l_idx))
        else:  # wave
            weight = 1.0 + 0.5 * np.sin(4.0 * np.pi * l_idx / max(L, 1))
        # exponential magnitudes give smooth tails; normalize each layer block
        # so its total mass equals the target weight exactly
        raw = rng.exponential(1.0, size=(L, H, S))
        raw *= (weight[:, None, None] * H * S) / raw.sum(axis=(1, 2), keepdims=True)
        scores = raw.astype(np.float32)

    t = AttentionTrace(L=L, H=H, S=S, ws=ws, label=label or name,
                       needle_positions=needles, scores=scores)
    t.validate()
    return t


def trace_from_window_attention(window_attn: np.ndarray, ws: int, pool_kernel: int,
                                label: str = "toy-model",
                                needle_positions: list[int] | None = None) -> AttentionTrace:
    """Build a trace from live window attention ([L, H, S] mean attention of
    the last ws query rows), applying the max-pooling pass at capture time."""
    pooled = pool1d_max(window_attn, pool_kernel)
    L, H, S = pooled.shape
    return AttentionTrace(L=L, H=H, S=S, ws=ws, label=label,
                          needle_positions=list(needle_positions or []),
                          scores=pooled.astype(np.float32))
