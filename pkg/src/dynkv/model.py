"""Deterministic decoder-only toy transformer with an explicit KV cache.

The model is untrained (seeded random weights) but structurally faithful:
pre-norm residual blocks, rotary position embedding applied to Q/K before the
keys are cached, grouped-query attention, causal masking, greedy decoding.
That is enough to evaluate cache-compression policies by logit fidelity
against the uncompressed cache.

Rotary embedding is applied at write time, so a cache slot carries its
position inside K and attention is invariant to slot storage order; evicting
middle tokens needs no position rewrite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import softmax_rows


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    n_query_heads: int = 4
    n_kv_heads: int = 2
    head_dim: int = 16
    vocab: int = 256
    max_seq: int = 2048
    seed: int = 0
    rope_base: float = 10000.0

    @property
    def hidden(self) -> int:
        return self.n_query_heads * self.head_dim

    def validate(self) -> None:
        dims = (self.n_layers, self.n_query_heads, self.n_kv_heads,
                self.head_dim, self.vocab, self.max_seq)
        if any(d <= 0 for d in dims):
            raise ValueError("invalid config")
        if self.n_query_heads % self.n_kv_heads != 0:
            raise ValueError("invalid config: query heads not divisible by kv heads")


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class Model:
    cfg: ModelConfig
    embed: np.ndarray
    unembed: np.ndarray
    layers: list[LayerWeights]


@dataclass
class KVState:
    """Per-layer cached K/V ([n_kv_heads, T, head_dim]) plus the original
    position of every slot. ``next_pos`` is the position the next decoded
    token will occupy (the original sequence length survives compression)."""
    keys: list[np.ndarray]
    values: list[np.ndarray]
    positions: list[np.ndarray]
    next_pos: int

    def seq_len(self, layer: int) -> int:
        return self.keys[layer].shape[1]

    def clone(self) -> "KVState":
        return KVState(
            keys=[k.copy() for k in self.keys],
            values=[v.copy() for v in self.values],
            positions=[p.copy() for p in self.positions],
            next_pos=self.next_pos,
        )


def init_deterministic(cfg: ModelConfig) -> Model:
    """Build a model with seeded weights; identical (config, seed) pairs give
    bit-identical weights."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    h, dk = cfg.hidden, cfg.head_dim
    scale = np.float32(1.0 / np.sqrt(h))

    def draw(*shape):
        return (rng.standard_normal(shape, dtype=np.float32) * scale)

    layers = [
        LayerWeights(
            wq=draw(h, cfg.n_query_heads * dk),
            wk=draw(h, cfg.n_kv_heads * dk),
            wv=draw(h, cfg.n_kv_heads * dk),
            wo=draw(cfg.n_query_heads * dk, h),
            w1=draw(h, 2 * h),
            w2=draw(2 * h, h),
        )
        for _ in range(cfg.n_layers)
    ]
    return Model(
        cfg=cfg,
        embed=rng.standard_normal((cfg.vocab, h), dtype=np.float32) * scale,
        unembed=draw(h, cfg.vocab),
        layers=layers,
    )


def _rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + 1e-5)


def _gelu(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + np.tanh(0.7978845608 * (x + 0.044715 * x * x * x)))).astype(np.float32)


def _rope(x: np.ndarray, positions: np.ndarray, base: float) -> np.ndarray:
    """Rotary embedding over the last axis. x: [..., T, dk], positions: [T]."""
    dk = x.shape[-1]
    half = dk // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / dk)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.cos(ang).astype(np.float32)
    sin = np.sin(ang).astype(np.float32)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _expand_kv(x: np.ndarray, groups: int) -> np.ndarray:
    """[n_kv, T, dk] -> [n_kv * groups, T, dk] by repeating each kv head."""
    return np.repeat(x, groups, axis=0)


def prefill(model: Model, tokens: np.ndarray, ws: int):
    """Full causal prefill.

    Returns (KVState, window_attention, logits): the uncompressed per-layer
    cache, the per-layer/per-query-head mean attention of the last ``ws``
    query rows over all S key positions (shape [L, H, S]), and the logits of
    the final position.
    """
    cfg = model.cfg
    tokens = np.asarray(tokens, dtype=np.int64)
    S = len(tokens)
    if S > cfg.max_seq:
        raise ValueError("context overflow")
    if ws < 1 or ws > S:
        raise ValueError("window exceeds sequence")

    H, kv, dk = cfg.n_query_heads, cfg.n_kv_heads, cfg.head_dim
    groups = H // kv
    pos = np.arange(S)
    x = model.embed[tokens]  # [S, hidden]

    keys, values, positions = [], [], []
    window_attn = np.zeros((cfg.n_layers, H, S), dtype=np.float32)
    causal = np.triu(np.ones((S, S), dtype=bool), k=1)

    for li, lw in enumerate(model.layers):
        hnorm = _rmsnorm(x)
        q = (hnorm @ lw.wq).reshape(S, H, dk).transpose(1, 0, 2)
        k = (hnorm @ lw.wk).reshape(S, kv, dk).transpose(1, 0, 2)
        v = (hnorm @ lw.wv).reshape(S, kv, dk).transpose(1, 0, 2)
        q = _rope(q, pos, cfg.rope_base)
        k = _rope(k, pos, cfg.rope_base)

        kq = _expand_kv(k, groups)
        vq = _expand_kv(v, groups)
        logits = np.einsum("hqd,hkd->hqk", q, kq)  # [H, S, S]
        logits = np.where(causal[None, :, :], np.float32(-1e30), logits)
        probs = softmax_rows(logits, scale=1.0 / np.sqrt(dk))
        window_attn[li] = probs[:, S - ws:, :].mean(axis=1)

        out = np.einsum("hqk,hkd->hqd", probs, vq)
        out = out.transpose(1, 0, 2).reshape(S, H * dk)
        x = x + out @ lw.wo
        x = x + _gelu(_rmsnorm(x) @ lw.w1) @ lw.w2

        keys.append(np.ascontiguousarray(k))
        values.append(np.ascontiguousarray(v))
        positions.append(pos.copy())

    final_logits = _rmsnorm(x[-1]) @ model.unembed
    cache = KVState(keys=keys, values=values, positions=positions, next_pos=S)
    return cache, window_attn, final_logits


def decode_step(model: Model, cache: KVState, token: int):
    """One autoregressive step against an arbitrary (full or compressed)
    cache. Appends one KV entry per layer, mutating ``cache`` in place, and
    returns (logits, cache)."""
    cfg = model.cfg
    if len(cache.keys) != cfg.n_layers:
        raise ValueError("cache layer count mismatch")
    if cache.next_pos >= cfg.max_seq:
        raise ValueError("context overflow")

    H, kv, dk = cfg.n_query_heads, cfg.n_kv_heads, cfg.head_dim
    groups = H // kv
    p = cache.next_pos
    ppos = np.array([p])
    x = model.embed[int(token)].copy()  # [hidden]

    for li, lw in enumerate(model.layers):
        hnorm = _rmsnorm(x)
        q = (hnorm @ lw.wq).reshape(1, H, dk).transpose(1, 0, 2)
        k = (hnorm @ lw.wk).reshape(1, kv, dk).transpose(1, 0, 2)
        v = (hnorm @ lw.wv).reshape(1, kv, dk).transpose(1, 0, 2)
        q = _rope(q, ppos, cfg.rope_base)
        k = _rope(k, ppos, cfg.rope_base)

        cache.keys[li] = np.concatenate([cache.keys[li], k], axis=1)
        cache.values[li] = np.concatenate([cache.values[li], v], axis=1)
        cache.positions[li] = np.append(cache.positions[li], p)

        kq = _expand_kv(cache.keys[li], groups)
        vq = _expand_kv(cache.values[li], groups)
        logits = np.einsum("hd,hkd->hk", q[:, 0, :], kq)
        probs = softmax_rows(logits, scale=1.0 / np.sqrt(dk))
        out = np.einsum("hk,hkd->hd", probs, vq).reshape(H * dk)
        x = x + out @ lw.wo
        x = x + _gelu(_rmsnorm(x) @ lw.w1) @ lw.w2

    cache.next_pos = p + 1
    return _rmsnorm(x) @ model.unembed, cache


def weight_checksum(model: Model) -> str:
    """Byte-exact fingerprint of all weights (for determinism tests)."""
    import hashlib

    h = hashlib.sha256()
    h.update(model.embed.tobytes())
    h.update(model.unembed.tobytes())
    for lw in model.layers:
        for arr in (lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2):
            h.update(arr.tobytes())
    return h.hexdigest()
