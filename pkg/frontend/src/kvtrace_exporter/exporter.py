"""Capture pooled window-attention scores from a pretrained decoder-only model.

Runs a single prefill forward pass with eager (materialized) attention,
averages each layer's attention probabilities over the last ``ws`` query
rows, max-pools the result along the key axis, and writes the scores as a
KVTRACE1 file. Scores are kept at query-head granularity; consumers that
work per KV head reduce them on their side.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .format import write_trace_file


@dataclass(frozen=True)
class ExportSpec:
    """One export job: which model, which prompt, how to pool, where to write."""

    model: str
    prompt: str  # file path, or "-" for stdin
    out: str
    ws: int = 32
    pool_kernel: int = 7
    device: str = "cpu"

    def validate(self) -> None:
        if self.ws < 1:
            raise ValueError("ws must be at least 1")
        if self.pool_kernel < 1 or self.pool_kernel % 2 == 0:
            raise ValueError("pool_kernel must be a positive odd number")
        if not self.model:
            raise ValueError("model identifier required")
        if not self.out:
            raise ValueError("output path required")


def read_prompt(source: str) -> str:
    if source == "-":
        return sys.stdin.read()
    with open(source, "r", encoding="utf-8") as fh:
        return fh.read()


def pooled_window_scores(
    attentions: tuple[torch.Tensor, ...], ws: int, pool_kernel: int
) -> np.ndarray:
    """Reduce per-layer attention probabilities to pooled [L, H, S] scores.

    Each attention tensor is [batch=1, H, S, S]. The mean over the last
    ``ws`` query rows gives one score per key position; max pooling uses
    stride 1 with -inf padding, which on non-negative scores equals the
    clipped-window sliding maximum.
    """
    if not attentions or attentions[0] is None:
        raise RuntimeError("attention not exposed")
    layers = []
    for attn in attentions:
        probs = attn[0].to(torch.float32)  # [H, S, S]
        S = probs.shape[-1]
        if ws >= S:
            raise ValueError("ws must be smaller than the prompt length")
        window_mean = probs[:, S - ws :, :].mean(dim=1)  # [H, S]
        pooled = F.max_pool1d(
            window_mean.unsqueeze(1), kernel_size=pool_kernel,
            stride=1, padding=pool_kernel // 2,
        ).squeeze(1)
        layers.append(pooled)
    return torch.stack(layers).numpy()


def export_trace(spec: ExportSpec) -> str:
    """Run one prefill pass and write the pooled scores; returns the path."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    spec.validate()
    torch.manual_seed(0)
    tokenizer = AutoTokenizer.from_pretrained(spec.model)
    model = AutoModelForCausalLM.from_pretrained(
        spec.model, attn_implementation="eager", dtype=torch.float32
    )
    model.eval()
    model.to(spec.device)

    text = read_prompt(spec.prompt)
    input_ids = tokenizer(text, return_tensors="pt")["input_ids"].to(spec.device)
    S = input_ids.shape[1]
    max_pos = getattr(model.config, "max_position_embeddings", None)
    if max_pos is not None and S > max_pos:
        raise ValueError("context overflow")
    if S <= spec.ws:
        raise ValueError("ws must be smaller than the prompt length")

    with torch.no_grad():
        out = model(input_ids, output_attentions=True, use_cache=False)
    scores = pooled_window_scores(out.attentions, spec.ws, spec.pool_kernel)
    write_trace_file(spec.out, scores, spec.ws, label=spec.model)
    return spec.out
