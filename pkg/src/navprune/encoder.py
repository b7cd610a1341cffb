"""Toy multi-head self-attention stacks with a per-layer pruning hook.

The stacks are training-free: seeded random projections produce genuine
softmax attention structure, per-token importance scores (received
attention summed over heads and query rows), and exact multiply-add
counts. That is everything the pruning strategies and the cost model
need; task skill is explicitly not a goal.

A layer runs in two phases.  Phase one computes the attention matrices
and the post-attention residual state ``u = x + z @ W_o``.  The pruning
hook fires on ``u`` (after attention, before the feed-forward block), so
tokens removed there never pay feed-forward cost.  Phase two applies the
feed-forward block with its residual to whatever survived.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

TokenId = Hashable


class OpCounter:
    """Accumulates multiply-add counts for every matmul the encoder runs."""

    def __init__(self) -> None:
        self.macs = 0

    def add_matmul(self, m: int, k: int, n: int) -> None:
        self.macs += m * k * n

    @property
    def flops(self) -> int:
        # one multiply-add = 2 floating point operations
        return 2 * self.macs


@dataclass(frozen=True)
class EncoderConfig:
    """Stack shape: depth, head count, feature width, FFN expansion, seed."""

    layers: int
    heads: int
    hidden_dim: int
    ffn_mult: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim not divisible by heads")
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads


@dataclass(frozen=True)
class LayerWeights:
    w_q: np.ndarray  # (heads, d, head_dim)
    w_k: np.ndarray  # (heads, d, head_dim)
    w_v: np.ndarray  # (heads, d, head_dim)
    w_o: np.ndarray  # (d, d)
    w_ffn1: np.ndarray  # (d, ffn_mult * d)
    w_ffn2: np.ndarray  # (ffn_mult * d, d)


@dataclass(frozen=True)
class EncoderWeights:
    config: EncoderConfig
    layers: tuple[LayerWeights, ...]


def init_weights(config: EncoderConfig) -> EncoderWeights:
    """Seeded normal init scaled by 1/sqrt(hidden_dim); same seed, same bytes."""
    rng = np.random.default_rng(config.seed)
    d, dh, h, f = config.hidden_dim, config.head_dim, config.heads, config.ffn_mult
    scale = 1.0 / math.sqrt(d)
    layers = []
    for _ in range(config.layers):
        layers.append(
            LayerWeights(
                w_q=rng.standard_normal((h, d, dh)) * scale,
                w_k=rng.standard_normal((h, d, dh)) * scale,
                w_v=rng.standard_normal((h, d, dh)) * scale,
                w_o=rng.standard_normal((d, d)) * scale,
                w_ffn1=rng.standard_normal((d, f * d)) * scale,
                w_ffn2=rng.standard_normal((f * d, d)) * scale,
            )
        )
    return EncoderWeights(config=config, layers=tuple(layers))


class FeatureSeq:
    """Ordered token sequence: ids, feature rows, and origin index sets.

    Origins track which positions of the unpruned input each surviving
    token covers; merging unions them.
    """

    __slots__ = ("ids", "features", "origins")

    def __init__(
        self,
        ids: Sequence[TokenId],
        features: np.ndarray,
        origins: Sequence[tuple[int, ...]] | None = None,
    ) -> None:
        self.ids: tuple[TokenId, ...] = tuple(ids)
        self.features = np.asarray(features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.ids):
            raise ValueError("features must be (len(ids), hidden_dim)")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("token ids must be unique within a sequence")
        if origins is None:
            origins = tuple((i,) for i in range(len(self.ids)))
        self.origins: tuple[tuple[int, ...], ...] = tuple(tuple(o) for o in origins)
        if len(self.origins) != len(self.ids):
            raise ValueError("origins must align with ids")
        if any(len(o) == 0 for o in self.origins):
            raise ValueError("every token must map to at least one origin index")

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, token_id: TokenId) -> int:
        return self.ids.index(token_id)


@dataclass(frozen=True)
class AttentionRecord:
    """Per-head softmax matrices for one layer; rows=queries, cols=keys.

    With a query-skip mask the skipped rows are simply not computed, so
    ``attn`` has shape (heads, n_queries, n_keys) with n_queries <= n_keys
    and ``query_ids`` names the rows that exist.
    """

    layer_index: int
    attn: np.ndarray
    query_ids: tuple[TokenId, ...]
    key_ids: tuple[TokenId, ...]


@dataclass(frozen=True)
class HookResult:
    """What a pruning hook wants done to the current sequence."""

    remove: tuple[TokenId, ...] = ()
    merge: tuple[tuple[TokenId, tuple[TokenId, ...]], ...] = ()


PruneHook = Callable[[int, FeatureSeq, dict], "HookResult | None"]


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional offsets added to stack inputs."""
    pos = np.arange(n, dtype=float)[:, None]
    idx = np.arange(dim, dtype=float)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    enc = np.zeros((n, dim))
    enc[:, 0::2] = np.sin(angles[:, 0::2])
    enc[:, 1::2] = np.cos(angles[:, 1::2])
    return enc


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _attention_phase(
    x: np.ndarray,
    ids: tuple[TokenId, ...],
    layer: LayerWeights,
    layer_index: int,
    head_dim: int,
    skip_queries: frozenset | None = None,
    counter: OpCounter | None = None,
) -> tuple[np.ndarray, AttentionRecord]:
    """Attention + output projection + residual; skipped queries pass through."""
    n, d = x.shape
    if skip_queries:
        rows = np.array([i for i, t in enumerate(ids) if t not in skip_queries], dtype=int)
    else:
        rows = np.arange(n)
    nq = len(rows)
    heads = layer.w_q.shape[0]
    scale = 1.0 / math.sqrt(head_dim)

    z = np.zeros((n, d))
    per_head = []
    for h in range(heads):
        q = x @ layer.w_q[h]
        k = x @ layer.w_k[h]
        v = x @ layer.w_v[h]
        if counter is not None:
            counter.add_matmul(n, d, head_dim)
            counter.add_matmul(n, d, head_dim)
            counter.add_matmul(n, d, head_dim)
        attn = _softmax_rows((q[rows] @ k.T) * scale)
        zh = attn @ v
        if counter is not None:
            counter.add_matmul(nq, head_dim, n)
            counter.add_matmul(nq, n, head_dim)
        z[rows, h * head_dim : (h + 1) * head_dim] = zh
        per_head.append(attn)

    u = x + z @ layer.w_o
    if counter is not None:
        counter.add_matmul(n, d, d)
    record = AttentionRecord(
        layer_index=layer_index,
        attn=np.stack(per_head),
        query_ids=tuple(ids[i] for i in rows),
        key_ids=ids,
    )
    return u, record


def _ffn_phase(u: np.ndarray, layer: LayerWeights, counter: OpCounter | None = None) -> np.ndarray:
    n, d = u.shape
    hidden = np.maximum(u @ layer.w_ffn1, 0.0)
    out = u + hidden @ layer.w_ffn2
    if counter is not None:
        counter.add_matmul(n, d, layer.w_ffn1.shape[1])
        counter.add_matmul(n, layer.w_ffn2.shape[0], d)
    return out


def importance_scores(record: AttentionRecord) -> dict:
    """Received attention per token: column sums over heads and query rows."""
    sums = record.attn.sum(axis=(0, 1))
    return {token: float(sums[j]) for j, token in enumerate(record.key_ids)}


def attention_forward(
    seq: FeatureSeq,
    weights: EncoderWeights,
    layer_index: int,
    skip_queries: Sequence[TokenId] | None = None,
    counter: OpCounter | None = None,
) -> tuple[FeatureSeq, AttentionRecord]:
    """One full layer (attention + residual + FFN + residual), no pruning."""
    if len(seq) == 0:
        raise ValueError("empty sequence")
    if seq.features.shape[1] != weights.config.hidden_dim:
        raise ValueError("feature width does not match encoder config")
    skip = frozenset(skip_queries) if skip_queries else None
    u, record = _attention_phase(
        seq.features, seq.ids, weights.layers[layer_index], layer_index,
        weights.config.head_dim, skip, counter,
    )
    out = _ffn_phase(u, weights.layers[layer_index], counter)
    return FeatureSeq(seq.ids, out, seq.origins), record


def _apply_hook_result(
    result: HookResult,
    ids: list,
    u: np.ndarray,
    origins: list,
) -> tuple[list, np.ndarray, list]:
    index = {t: i for i, t in enumerate(ids)}
    for t in result.remove:
        if t not in index:
            raise ValueError(f"hook removed token absent from sequence: {t!r}")
    touched: set = set(result.remove)
    groups: dict[int, list[int]] = {}
    for dst, srcs in result.merge:
        if dst not in index:
            raise ValueError(f"hook merged into token absent from sequence: {dst!r}")
        if dst in touched:
            raise ValueError(f"merge destination also removed or merged away: {dst!r}")
        for s in srcs:
            if s not in index:
                raise ValueError(f"hook merged token absent from sequence: {s!r}")
            if s in touched or s == dst:
                raise ValueError(f"token appears in more than one prune action: {s!r}")
            touched.add(s)
            groups.setdefault(index[dst], []).append(index[s])

    drop: set[int] = {index[t] for t in result.remove}
    new_rows = []
    new_ids = []
    new_origins = []
    for i, t in enumerate(ids):
        if i in drop:
            continue
        if any(i in srcs for srcs in groups.values()):
            continue
        if i in groups:
            member_rows = [i] + groups[i]
            new_rows.append(u[member_rows].mean(axis=0))
            merged = sorted({o for j in member_rows for o in origins[j]})
            new_origins.append(tuple(merged))
        else:
            new_rows.append(u[i])
            new_origins.append(origins[i])
        new_ids.append(t)
    return new_ids, np.array(new_rows), new_origins


def run_stack(
    seq: FeatureSeq,
    weights: EncoderWeights,
    prune_hook: PruneHook | None = None,
    *,
    skip_queries: Sequence[TokenId] | None = None,
    add_positions: bool = True,
    counter: OpCounter | None = None,
) -> tuple[FeatureSeq, list[dict]]:
    """Run every layer, invoking the pruning hook after each attention phase.

    The hook sees the post-attention residual state and that layer's
    importance scores; whatever it removes skips the feed-forward block
    and every later layer.  Returns the surviving sequence and the
    per-layer score maps for audit.
    """
    if len(seq) == 0:
        raise ValueError("empty sequence")
    if seq.features.shape[1] != weights.config.hidden_dim:
        raise ValueError("feature width does not match encoder config")
    skip = frozenset(skip_queries) if skip_queries else None

    x = seq.features.copy()
    if add_positions:
        x = x + sinusoidal_positions(len(seq), weights.config.hidden_dim)
    ids = list(seq.ids)
    origins = list(seq.origins)

    scores_per_layer: list[dict] = []
    for layer_index, layer in enumerate(weights.layers):
        if len(ids) == 0:
            raise ValueError("empty sequence")
        u, record = _attention_phase(
            x, tuple(ids), layer, layer_index, weights.config.head_dim, skip, counter
        )
        scores = importance_scores(record)
        scores_per_layer.append(scores)
        if prune_hook is not None:
            current = FeatureSeq(ids, u, origins)
            result = prune_hook(layer_index, current, scores)
            if result is not None and (result.remove or result.merge):
                ids, u, origins = _apply_hook_result(result, ids, u, origins)
        x = _ffn_phase(u, layer, counter)

    return FeatureSeq(ids, x, origins), scores_per_layer
