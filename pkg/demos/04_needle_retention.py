"""Needle retention: attention-aware vs. attention-agnostic eviction.

Plants a high-attention "needle" position at varying depths of the context
and measures, for each policy, whether the needle survives compression.
Recency-only eviction loses any needle outside its window; score-based
policies keep it at every depth.

Run:  python3 demos/04_needle_retention.py
"""

from dynkv import PolicyConfig, synth_trace
from dynkv.harness import needle_retention
from dynkv.policies import make_plan

L, H, S, ws, wt = 8, 2, 2048, 16, 64
policies = ["streaming", "h2o", "snapkv", "pyramid", "dynamic"]

print(f"context {S}, per-layer budget {wt} tokens ({wt / S:.1%})\n")
print("needle depth   " + "  ".join(f"{p:>10s}" for p in policies))
for depth_pct in [5, 25, 50, 75, 95]:
    p = int(S * depth_pct / 100)
    trace = synth_trace(L, H, S, ws, f"needle-at:{p}:0.9", seed=depth_pct)
    scores = []
    for name in policies:
        cfg = PolicyConfig(policy=name, wt=wt, ws=ws, sink=4, pyramid_min=32)
        scores.append(needle_retention(make_plan(trace, cfg), trace))
    print(f"{depth_pct:10d}%   " + "  ".join(f"{s:10.2f}" for s in scores))
