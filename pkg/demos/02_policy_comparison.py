"""Compare all cache-compression policies on the toy model by logit fidelity.

Builds a deterministic toy transformer, prefises a random prompt, derives the
attention trace, and evaluates every policy at the same token budget: how far
do the decode logits drift from the uncompressed cache, and how often does
the greedy token still agree?

Run:  python3 demos/02_policy_comparison.py
"""

import numpy as np

from dynkv import ModelConfig, init_deterministic, prefill, trace_from_window_attention
from dynkv.harness import compare_run, reports_csv
from dynkv.policies import PolicyConfig

mcfg = ModelConfig(n_layers=8, n_query_heads=4, n_kv_heads=2, head_dim=16,
                   vocab=256, seed=0)
model = init_deterministic(mcfg)
tokens = np.random.default_rng(42).integers(0, mcfg.vocab, size=512)

ws, wt = 16, 96
_, window_attn, _ = prefill(model, tokens, ws)
trace = trace_from_window_attention(window_attn, ws, pool_kernel=7, label="toy")

policies = [PolicyConfig(policy=p, wt=wt, ws=ws, sink=4, pyramid_min=32)
            for p in ["full", "streaming", "h2o", "snapkv", "pyramid", "dynamic"]]
rows = compare_run([("toy-512", trace)], policies, model=model, tokens=tokens, steps=8)

print(f"prompt length {len(tokens)}, per-layer budget {wt} tokens "
      f"({wt / len(tokens):.1%} of the context)\n")
print(f"{'policy':12s} {'kept':>6s} {'ratio':>7s} {'max|dlogit|':>12s} {'top1':>6s}")
for r in rows:
    print(f"{r.policy:12s} {r.retained_tokens:6d} {r.compression_ratio:7.3f} "
          f"{r.logit_max_abs_diff:12.4g} {r.top1_agreement:6.2f}")

print("\nfull CSV:\n")
print(reports_csv(rows))
