"""Layer-adaptive budget allocation with progressive cache update.

The compression runs during prefill only. Each layer first keeps a
provisional, score-ordered buffer of at most ``B_l = floor((wt-ws)*r_max)``
non-window tokens (plus the observation window). Every ``m`` layers, the
per-layer budgets of *all* processed layers are recomputed from the pooled
window-attention scores: a global top-k over the flattened layer/head/position
score block is counted per layer, normalized by the per-layer maximum, scaled
to the buffer cap, then rescaled so the budgets of the n processed layers
total ``(wt-ws)*n``. Buffers are truncated to their budgets; a layer's
retained count never grows back (monotone shrink), so truncation is always a
prefix slice of the score-descending buffer.

Knob conventions the literature leaves open, pinned here for determinism:
the global top-k size scales with the head count (k = (wt-ws)*H*n); flat
indices map to layers by dividing by H*S; normalization is divide-by-max;
ties at the top-k threshold are counted fractionally (each layer gets its
proportional share), which keeps fully symmetric inputs symmetric; every
layer keeps at least 1 non-window token; when L is not a multiple of m a
terminal update runs at n = L so every layer gets a final budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import pool1d_max, rank_desc
from .policies import PolicyConfig, RetentionPlan, identity_plan, _finish
from .trace import AttentionTrace


def buffer_cap(cfg: PolicyConfig) -> int:
    """Per-layer provisional retention cap B_l = floor((wt-ws) * r_max)."""
    return int((cfg.wt - cfg.ws) * cfg.r_max)


@dataclass
class BufferedLayer:
    """Provisional retention of one layer: non-window positions in descending
    selection-score order, the window implicitly appended at finalization."""
    order: np.ndarray    # candidate non-window positions, best first
    scores: np.ndarray   # matching scores, non-increasing
    count: int           # currently retained prefix length (<= len(order))


def layer_buffer(window_attention: np.ndarray, cfg: PolicyConfig) -> BufferedLayer:
    """Buffer one layer from raw per-head window-attention scores [H, S]:
    max-pool each head, reduce heads by max, rank non-window positions and
    keep the top B_l."""
    pooled = pool1d_max(np.asarray(window_attention, dtype=np.float32), cfg.pool_kernel)
    return buffer_from_pooled(pooled, cfg)


def buffer_from_pooled(pooled: np.ndarray, cfg: PolicyConfig) -> BufferedLayer:
    """Same as layer_buffer but for scores that are already pooled (the form
    traces store)."""
    S = pooled.shape[-1]
    reduced = pooled.max(axis=0)[: S - cfg.ws]
    cap = min(buffer_cap(cfg), S - cfg.ws)
    order = rank_desc(reduced, cap)
    return BufferedLayer(order=order, scores=reduced[order], count=cap)


def count_topk_per_layer(scores: np.ndarray, k: int) -> np.ndarray:
    """Counting function: how many of the global top-k flattened score entries
    fall in each layer.

    ``scores`` is [n, H, S]; the return is float because entries tied at the
    k-th value are attributed fractionally to their layers (a symmetric input
    must yield symmetric counts).
    """
    n = scores.shape[0]
    per_layer = scores.reshape(n, -1)
    flat = per_layer.reshape(-1)
    if k >= flat.size:
        return np.full(n, per_layer.shape[1], dtype=np.float64)
    tau = np.partition(flat, flat.size - k)[flat.size - k]
    greater = (per_layer > tau).sum(axis=1).astype(np.float64)
    ties = (per_layer == tau).sum(axis=1).astype(np.float64)
    remaining = k - greater.sum()
    if ties.sum() > 0:
        greater += ties * (remaining / ties.sum())
    return greater


def budgets_from_counts(counts: np.ndarray, cfg: PolicyConfig, n: int) -> np.ndarray:
    """Turn per-layer selection counts into integer budgets Z' for the n
    processed layers: normalize by max, scale to the buffer cap, floor,
    rescale so the total is (wt-ws)*n, floor again, clamp into [1, B_l]."""
    counts = np.asarray(counts, dtype=np.float64)
    cmax = counts.max()
    if cmax <= 0:
        raise ValueError("degenerate trace")
    cap = buffer_cap(cfg)
    norm = counts / cmax
    z = np.floor(cap * norm)
    r = z.sum() / ((cfg.wt - cfg.ws) * n)
    if r <= 0:
        raise ValueError("degenerate trace")
    zp = np.floor(z / r).astype(np.int64)
    return np.clip(zp, 1, cap)


def update_buffer_length(pooled_scores: np.ndarray, cfg: PolicyConfig) -> np.ndarray:
    """Recompute the budgets of the first n layers from their pooled scores
    ([n, H, S]): global top-k with k = (wt-ws)*H*n, counted per layer,
    averaged over n, then scaled and rescaled into integer budgets."""
    n, H, S = pooled_scores.shape
    if pooled_scores.max() <= 0:
        raise ValueError("degenerate trace")
    k = (cfg.wt - cfg.ws) * H * n
    counts = count_topk_per_layer(pooled_scores, k) / n
    return budgets_from_counts(counts, cfg, n)


@dataclass
class CompressionResult:
    plan: RetentionPlan
    budgets: np.ndarray          # final Z' (terminal update output), length L
    retained: np.ndarray         # non-window tokens actually kept per layer
    history: list[np.ndarray]    # retained counts after each update step
    no_compression: bool = False


def run_prefill_compression(trace: AttentionTrace, cfg: PolicyConfig) -> CompressionResult:
    """Run the full prefill compression loop over a trace.

    Buffers each layer in turn; every m layers (and once more at the end if
    L is not a multiple of m) recomputes all processed layers' budgets from
    the pooled scores and truncates the buffers. Truncation only shrinks:
    budgets are clamped to each buffer's current length, so the final
    retained count per layer is the running minimum of its assigned budgets.
    """
    cfg.validate()
    L, S = trace.L, trace.S
    if S <= cfg.wt:
        plan = identity_plan(S, L, cfg.ws, "dynamic")
        counts = np.full(L, S - cfg.ws, dtype=np.int64)
        return CompressionResult(plan=plan, budgets=counts.copy(), retained=counts,
                                 history=[counts.copy()], no_compression=True)

    buffers: list[BufferedLayer] = []
    history: list[np.ndarray] = []
    final_budgets: np.ndarray | None = None

    def update(n: int) -> np.ndarray:
        zp = update_buffer_length(trace.scores[:n], cfg)
        for i in range(n):
            buffers[i].count = min(buffers[i].count, int(zp[i]))
        history.append(np.array([b.count for b in buffers], dtype=np.int64))
        return zp

    for l in range(L):
        buffers.append(buffer_from_pooled(trace.scores[l], cfg))
        if (l + 1) % cfg.m == 0:
            final_budgets = update(l + 1)

    if L % cfg.m != 0 or final_budgets is None:
        final_budgets = update(L)

    plan = _finish(S, cfg.ws, [b.order[: b.count] for b in buffers], "dynamic")
    plan.budgets = [b.count for b in buffers]
    return CompressionResult(
        plan=plan,
        budgets=final_budgets,
        retained=np.array([b.count for b in buffers], dtype=np.int64),
        history=history,
    )


def budget_report(result: CompressionResult, cfg: PolicyConfig, trace: AttentionTrace,
                  n_kv_heads: int = 8, d_k: int = 128, bytes_per_elem: int = 2) -> dict:
    """JSON-able summary of a compression run: config echo, per-layer budgets
    and retained counts, byte accounting and the compression ratio."""
    from .harness import memory_bytes

    per_layer_tokens = [int(n) + cfg.ws for n in result.retained]
    if result.no_compression:
        per_layer_tokens = [trace.S] * trace.L
    total_bytes = memory_bytes(per_layer_tokens, n_kv_heads, d_k, bytes_per_elem)
    retained_tokens = int(sum(per_layer_tokens))
    return {
        "format_version": "dynkv-report-1",
        "config": cfg.as_dict(),
        "trace": {"L": trace.L, "H": trace.H, "S": trace.S, "ws": trace.ws,
                  "label": trace.label},
        "buffer_cap": buffer_cap(cfg),
        "budgets": [int(z) for z in result.budgets],
        "retained_non_window": [int(n) for n in result.retained],
        "per_layer_tokens": per_layer_tokens,
        "per_layer_bytes": [memory_bytes([t], n_kv_heads, d_k, bytes_per_elem)
                            for t in per_layer_tokens],
        "total_bytes": total_bytes,
        "compression_ratio": retained_tokens / (trace.S * trace.L),
        "no_compression": result.no_compression,
    }
