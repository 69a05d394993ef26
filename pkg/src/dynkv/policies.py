"""Fixed-pattern baseline cache-eviction policies behind one plan interface.

Every selector returns a RetentionPlan: per layer, an ascending list of the
key positions to keep. All plans keep the final ``ws`` observation-window
positions in every layer; fixed-budget policies keep exactly ``min(wt, S)``
positions per layer. When ``S <= wt`` compression degenerates to the
identity plan (FullKV semantics) for every policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .kernels import pool1d_max, rank_desc
from .model import KVState
from .trace import AttentionTrace

POLICIES = ("full", "streaming", "h2o", "snapkv", "pyramid", "dynamic")


@dataclass(frozen=True)
class PolicyConfig:
    policy: str = "dynamic"
    wt: int = 128          # per-layer target cache size, window included
    ws: int = 32           # observation window size
    r_max: float = 2.0     # provisional buffer scale, B^l = floor((wt-ws)*r_max)
    m: int = 4             # progressive update interval (layers)
    pool_kernel: int = 7   # max-pooling kernel over per-position scores
    sink: int = 4          # streaming only: attention-sink prefix size
    pyramid_min: int = 32  # pyramid only: budget of the last layer

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy: {self.policy!r}")
        if self.ws < 1 or self.ws >= self.wt:
            raise ValueError("invalid config: require 1 <= ws < wt")
        if self.r_max < 1.0:
            raise ValueError("invalid config: r_max must be >= 1")
        if self.m < 1:
            raise ValueError("invalid config: m must be >= 1")
        if self.pool_kernel < 1 or self.pool_kernel % 2 == 0:
            raise ValueError("invalid kernel")
        if self.sink < 0:
            raise ValueError("invalid config: negative sink")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RetentionPlan:
    """Per-layer retained positions (ascending, window always included)."""
    S: int
    ws: int
    positions: list[np.ndarray]
    budgets: list[int] = field(default_factory=list)  # non-window tokens kept per layer
    policy: str = ""

    @property
    def L(self) -> int:
        return len(self.positions)

    def retained_tokens(self) -> int:
        return int(sum(len(p) for p in self.positions))

    def validate(self) -> None:
        window = np.arange(self.S - self.ws, self.S)
        for pos in self.positions:
            if len(np.unique(pos)) != len(pos):
                raise ValueError("plan has duplicate positions")
            if np.any(pos < 0) or np.any(pos >= self.S):
                raise ValueError("plan position out of range")
            if np.any(np.diff(pos) <= 0):
                raise ValueError("plan positions not ascending")
            if not np.isin(window, pos).all():
                raise ValueError("plan drops window positions")


def identity_plan(S: int, L: int, ws: int, policy: str = "full") -> RetentionPlan:
    return RetentionPlan(
        S=S, ws=ws,
        positions=[np.arange(S) for _ in range(L)],
        budgets=[S - ws] * L,
        policy=policy,
    )


def _finish(S: int, ws: int, per_layer_nonwindow: list[np.ndarray],
            policy: str) -> RetentionPlan:
    window = np.arange(S - ws, S)
    positions = [np.sort(np.concatenate([np.asarray(nw, dtype=np.int64), window]))
                 for nw in per_layer_nonwindow]
    return RetentionPlan(S=S, ws=ws, positions=positions,
                         budgets=[len(nw) for nw in per_layer_nonwindow],
                         policy=policy)


def streaming_select(S: int, L: int, cfg: PolicyConfig) -> RetentionPlan:
    """Attention sinks plus a recency window; attention-agnostic."""
    cfg.validate()
    if cfg.sink + cfg.ws > cfg.wt:
        raise ValueError("sink exceeds budget")
    if S <= cfg.wt:
        return identity_plan(S, L, cfg.ws, "streaming")
    keep = np.unique(np.concatenate([
        np.arange(cfg.sink),
        np.arange(S - (cfg.wt - cfg.sink), S),
    ]))
    return RetentionPlan(S=S, ws=cfg.ws, positions=[keep.copy() for _ in range(L)],
                         budgets=[len(keep) - cfg.ws] * L, policy="streaming")


def h2o_select(trace: AttentionTrace, cfg: PolicyConfig) -> RetentionPlan:
    """Heavy-hitter selection: per layer, rank non-window positions by
    head-summed accumulated score; keep the top wt-ws plus the window."""
    cfg.validate()
    S = trace.S
    if S <= cfg.wt:
        return identity_plan(S, trace.L, cfg.ws, "h2o")
    quota = cfg.wt - cfg.ws
    nonwin = []
    for l in range(trace.L):
        acc = trace.scores[l].sum(axis=0)[: S - cfg.ws]
        nonwin.append(rank_desc(acc, quota))
    return _finish(S, cfg.ws, nonwin, "h2o")


def snapkv_select(trace: AttentionTrace, cfg: PolicyConfig) -> RetentionPlan:
    """Per-head pooled top-k, merged per layer.

    Each head nominates its top wt-ws non-window candidates by max-pooled
    score; the layer keeps the top wt-ws of the union ranked by
    max-over-heads pooled score, plus the window.
    """
    cfg.validate()
    S = trace.S
    if S <= cfg.wt:
        return identity_plan(S, trace.L, cfg.ws, "snapkv")
    quota = cfg.wt - cfg.ws
    nonwin = []
    for l in range(trace.L):
        pooled = pool1d_max(trace.scores[l], cfg.pool_kernel)[:, : S - cfg.ws]
        cand = np.unique(np.concatenate(
            [rank_desc(pooled[h], quota) for h in range(trace.H)]))
        merged = pooled.max(axis=0)
        pick = cand[rank_desc(merged[cand], quota)]
        nonwin.append(pick)
    return _finish(S, cfg.ws, nonwin, "snapkv")


def pyramid_budgets(L: int, cfg: PolicyConfig) -> np.ndarray:
    """Linearly decreasing per-layer token budgets (window included) from
    2*wt - pyramid_min down to pyramid_min, totalling wt*L exactly."""
    cfg.validate()
    if cfg.pyramid_min > cfg.wt:
        raise ValueError("invalid pyramid")
    if cfg.pyramid_min < cfg.ws:
        raise ValueError("invalid pyramid: pyramid_min below window")
    if L == 1:
        return np.array([cfg.wt], dtype=np.int64)
    top = 2 * cfg.wt - cfg.pyramid_min
    vals = np.linspace(top, cfg.pyramid_min, L)  # symmetric: sums to wt*L
    floors = np.floor(vals).astype(np.int64)
    rem = int(round(vals.sum())) - int(floors.sum())
    # distribute the leftover +1s by largest fractional part, earlier layer first
    frac = vals - floors
    order = np.lexsort((np.arange(L), -frac))
    floors[order[:rem]] += 1
    assert int(floors.sum()) == cfg.wt * L
    assert np.all(np.diff(floors) <= 0)
    return floors


def pyramid_select(trace: AttentionTrace, cfg: PolicyConfig) -> RetentionPlan:
    """Pyramid-shaped budgets with snapkv-style (max-over-heads pooled)
    per-layer selection."""
    cfg.validate()
    S = trace.S
    if S <= cfg.wt:
        return identity_plan(S, trace.L, cfg.ws, "pyramid")
    budgets = pyramid_budgets(trace.L, cfg)
    nonwin = []
    for l in range(trace.L):
        quota = min(int(budgets[l]) - cfg.ws, S - cfg.ws)
        pooled = pool1d_max(trace.scores[l], cfg.pool_kernel)[:, : S - cfg.ws]
        merged = pooled.max(axis=0)
        nonwin.append(rank_desc(merged, quota))
    return _finish(S, cfg.ws, nonwin, "pyramid")


def make_plan(trace: AttentionTrace, cfg: PolicyConfig) -> RetentionPlan:
    """Dispatch a trace to the configured policy's selector."""
    cfg.validate()
    if cfg.policy == "full":
        return identity_plan(trace.S, trace.L, cfg.ws, "full")
    if cfg.policy == "streaming":
        return streaming_select(trace.S, trace.L, cfg)
    if cfg.policy == "h2o":
        return h2o_select(trace, cfg)
    if cfg.policy == "snapkv":
        return snapkv_select(trace, cfg)
    if cfg.policy == "pyramid":
        return pyramid_select(trace, cfg)
    from .allocator import run_prefill_compression

    return run_prefill_compression(trace, cfg).plan


def apply_plan(cache: KVState, plan: RetentionPlan) -> KVState:
    """Narrow a cache to the plan's positions, preserving original position
    metadata. Returns a new KVState; the input is untouched."""
    out = KVState(keys=[], values=[], positions=[], next_pos=cache.next_pos)
    for l, keep in enumerate(plan.positions):
        slot_of = {int(p): i for i, p in enumerate(cache.positions[l])}
        try:
            idx = np.array([slot_of[int(p)] for p in keep], dtype=np.int64)
        except KeyError:
            raise ValueError("plan/cache mismatch")
        out.keys.append(cache.keys[l][:, idx, :].copy())
        out.values.append(cache.values[l][:, idx, :].copy())
        out.positions.append(np.asarray(keep, dtype=np.int64).copy())
    return out
