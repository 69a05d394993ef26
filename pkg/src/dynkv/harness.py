"""Evaluation harness: logit fidelity vs. the full cache, needle-position
retention, per-layer retention-rate profiles, byte accounting and
multi-policy comparison runs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .allocator import count_topk_per_layer
from .model import Model, decode_step, prefill
from .policies import PolicyConfig, RetentionPlan, apply_plan, make_plan
from .trace import AttentionTrace

REPORT_FIELDS = [
    "trace", "policy", "wt", "ws", "retained_tokens", "compression_ratio",
    "cache_bytes", "needle_retention", "logit_max_abs_diff", "top1_agreement",
    "per_layer_budgets", "error",
]


@dataclass
class EvalReport:
    trace: str
    policy: str
    cfg: PolicyConfig
    retained_tokens: int = 0
    compression_ratio: float = 0.0
    cache_bytes: int = 0
    needle_retention: float | None = None
    logit_max_abs_diff: float | None = None
    top1_agreement: float | None = None
    per_layer_budgets: list[int] = field(default_factory=list)
    error: str | None = None

    def row(self) -> dict:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return format(x, ".6g")
            return x

        return {
            "trace": self.trace,
            "policy": self.policy,
            "wt": self.cfg.wt,
            "ws": self.cfg.ws,
            "retained_tokens": self.retained_tokens,
            "compression_ratio": fmt(self.compression_ratio),
            "cache_bytes": self.cache_bytes,
            "needle_retention": fmt(self.needle_retention),
            "logit_max_abs_diff": fmt(self.logit_max_abs_diff),
            "top1_agreement": fmt(self.top1_agreement),
            "per_layer_budgets": " ".join(str(b) for b in self.per_layer_budgets),
            "error": fmt(self.error),
        }


def memory_bytes(per_layer_tokens, n_kv_heads: int, d_k: int,
                 bytes_per_elem: int = 2) -> int:
    """Exact cache size: sum over layers of tokens * kv_heads * d_k * 2 (K and
    V) * bytes per element."""
    if n_kv_heads <= 0 or d_k <= 0 or bytes_per_elem <= 0:
        raise ValueError("invalid config: non-positive dimension")
    return int(sum(int(t) for t in per_layer_tokens) * n_kv_heads * d_k * 2 * bytes_per_elem)


def plan_memory_bytes(plan: RetentionPlan, n_kv_heads: int, d_k: int,
                      bytes_per_elem: int = 2) -> int:
    return memory_bytes([len(p) for p in plan.positions], n_kv_heads, d_k, bytes_per_elem)


def compression_ratio(retained_tokens: int, S: int, L: int) -> float:
    return retained_tokens / (S * L)


def logit_fidelity(model: Model, tokens, plan: RetentionPlan, steps: int = 8):
    """Decode ``steps`` greedy tokens against the full cache and the
    compressed cache side by side; the continuation is teacher-forced from the
    full-cache run so both see identical inputs. Returns
    (max_abs_diff, top1_agreement)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    full_cache, _, logits = prefill(model, tokens, plan.ws)
    comp_cache = apply_plan(full_cache, plan)
    tok = int(np.argmax(logits))
    max_diff, agree = 0.0, 0
    for _ in range(steps):
        lf, full_cache = decode_step(model, full_cache, tok)
        lc, comp_cache = decode_step(model, comp_cache, tok)
        max_diff = max(max_diff, float(np.abs(lf - lc).max()))
        agree += int(np.argmax(lf) == np.argmax(lc))
        tok = int(np.argmax(lf))
    return max_diff, agree / steps


def needle_retention(plan: RetentionPlan, trace: AttentionTrace) -> float:
    """Mean over layers of the fraction of the trace's needle positions the
    plan retains."""
    if not trace.needle_positions:
        raise ValueError("trace has no needle")
    needles = np.asarray(trace.needle_positions)
    fracs = [float(np.isin(needles, pos).mean()) for pos in plan.positions]
    return float(np.mean(fracs))


def layer_profile(traces: list[AttentionTrace], per_layer_k: int = 128):
    """Per-layer retention-rate table: for each trace, the share of the global
    top-(per_layer_k * L) score entries that falls in each layer (a
    probability distribution over layers), plus min/q1/median/q3/max
    aggregates across traces.

    Returns (rates [n_traces, L], aggregate dict of L-length arrays).
    """
    if not traces:
        raise ValueError("no traces")
    L = traces[0].L
    if any(t.L != L for t in traces):
        raise ValueError("incompatible traces")
    rows = []
    for t in traces:
        counts = count_topk_per_layer(t.scores, per_layer_k * L)
        rows.append(counts / counts.sum())
    rates = np.array(rows)
    agg = {
        "min": rates.min(axis=0),
        "q1": np.quantile(rates, 0.25, axis=0),
        "median": np.median(rates, axis=0),
        "q3": np.quantile(rates, 0.75, axis=0),
        "max": rates.max(axis=0),
    }
    return rates, agg


def profile_csv(traces: list[AttentionTrace], per_layer_k: int = 128) -> str:
    """Retention-rate table as CSV: one row per trace plus aggregate rows."""
    rates, agg = layer_profile(traces, per_layer_k)
    L = rates.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + [f"layer_{i}" for i in range(L)])
    for t, row in zip(traces, rates):
        w.writerow([t.label] + [format(x, ".6g") for x in row])
    for name in ("min", "q1", "median", "q3", "max"):
        w.writerow([name] + [format(x, ".6g") for x in agg[name]])
    return buf.getvalue()


def evaluate_cell(trace_name: str, trace: AttentionTrace, cfg: PolicyConfig,
                  model: Model | None = None, tokens=None,
                  n_kv_heads: int = 8, d_k: int = 128,
                  bytes_per_elem: int = 2, steps: int = 8) -> EvalReport:
    """One (trace, policy) evaluation; failures are captured in the report."""
    rep = EvalReport(trace=trace_name, policy=cfg.policy, cfg=cfg)
    try:
        plan = make_plan(trace, cfg)
        rep.retained_tokens = plan.retained_tokens()
        rep.compression_ratio = compression_ratio(rep.retained_tokens, trace.S, trace.L)
        rep.per_layer_budgets = [int(b) for b in plan.budgets]
        if model is not None:
            rep.cache_bytes = plan_memory_bytes(plan, model.cfg.n_kv_heads,
                                                model.cfg.head_dim, bytes_per_elem)
        else:
            rep.cache_bytes = plan_memory_bytes(plan, n_kv_heads, d_k, bytes_per_elem)
        if trace.needle_positions:
            rep.needle_retention = needle_retention(plan, trace)
        if model is not None and tokens is not None and len(tokens) == trace.S:
            diff, agree = logit_fidelity(model, tokens, plan, steps=steps)
            rep.logit_max_abs_diff = diff
            rep.top1_agreement = agree
    except Exception as exc:  # a failing cell is reported, not fatal
        rep.error = f"{type(exc).__name__}: {exc}"
    return rep


def compare_run(traces: list[tuple[str, AttentionTrace]],
                policies: list[PolicyConfig],
                model: Model | None = None, tokens=None,
                **kwargs) -> list[EvalReport]:
    """Cartesian (trace, policy) evaluation, deterministic input order."""
    if not traces or not policies:
        raise ValueError("empty inputs")
    return [evaluate_cell(name, t, cfg, model=model, tokens=tokens, **kwargs)
            for name, t in traces for cfg in policies]


def reports_csv(reports: list[EvalReport], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def reports_json(reports: list[EvalReport]) -> str:
    payload = {
        "format_version": "dynkv-report-1",
        "rows": [dict(r.row(), config=r.cfg.as_dict()) for r in reports],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
