"""Pruning strategies and budget scheduling.

Covers the three navigation-aware strategies (background-view pruning,
backtracking-node pruning, vocabulary-priority pruning) and the generic
baselines (random, cascade, single-shot layer pruning, token merging),
plus the query-skip mask that trades token removal for skipped attention
rows.

Every strategy is a pure function with one global tie rule: among equal
scores the token with the lower original index is removed first, so all
outputs are reproducible.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import FeatureSeq

STRATEGY_KINDS = ("bgp", "vpp", "btp", "random", "cascade", "fastv", "tome")


@dataclass(frozen=True)
class PruneBudget:
    """Global retain fraction mapped to per-layer removal counts."""

    retain_fraction: float
    per_layer_removals: tuple[int, ...]
    modality: str = "views"

    @property
    def total(self) -> int:
        return sum(self.per_layer_removals)


def schedule_budget(
    retain_fraction: float, layers: int, prunable_count: int, modality: str = "views"
) -> PruneBudget:
    """Round-half-up total removals, split evenly with the remainder first.

    round((1 - r) * count) tokens come out in total; each layer gets an
    equal share and the earliest layers absorb the remainder.
    """
    if not 0.0 < retain_fraction <= 1.0:
        raise ValueError("retain_fraction must be in (0, 1]")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if prunable_count < 0:
        raise ValueError("prunable_count must be >= 0")
    total = int(math.floor((1.0 - retain_fraction) * prunable_count + 0.5))
    base, rem = divmod(total, layers)
    per_layer = tuple(base + 1 if i < rem else base for i in range(layers))
    return PruneBudget(retain_fraction, per_layer, modality)


@dataclass(frozen=True)
class ViewPartition:
    """Panorama split into action views (one per navigable edge) and background."""

    action_ids: tuple
    background_ids: tuple

    def __post_init__(self) -> None:
        if set(self.action_ids) & set(self.background_ids):
            raise ValueError("action and background views must be disjoint")

    @property
    def all_ids(self) -> tuple:
        return self.action_ids + self.background_ids


@dataclass(frozen=True)
class StrategySpec:
    """Named strategy with kind-specific parameters.

    ``modalities`` records which inputs the strategy applies to; the
    navigation-aware kinds are fixed to their modality, the generic
    baselines default to instruction + views like the published
    comparisons.
    """

    kind: str
    params: dict = field(default_factory=dict)
    protect_action_views: bool = True
    modalities: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        defaults = {
            "bgp": ("views",),
            "vpp": ("instruction",),
            "btp": ("history",),
            "tome": ("views",),
            "random": ("instruction", "views"),
            "cascade": ("instruction", "views"),
            "fastv": ("instruction", "views"),
        }
        if not self.modalities:
            object.__setattr__(self, "modalities", defaults[self.kind])
        if self.kind == "fastv" and self.params.get("prune_layer", 2) < 1:
            raise ValueError("fastv prune_layer must be >= 1")
        if self.kind == "btp" and self.params.get("k_btp", 0) < 0:
            raise ValueError("k_btp must be >= 0")


def _rank_for_removal(ids: Sequence, scores: dict) -> list:
    """Candidates ordered lowest score first, ties by lower original index."""
    return sorted(range(len(ids)), key=lambda i: (scores.get(ids[i], 0.0), i))


def bgp_prune(
    partition: ViewPartition, scores: dict, k: int, clamp_log: list | None = None
) -> list:
    """Keep every action view; drop the k lowest-scoring background views."""
    if k < 0:
        raise ValueError("k must be >= 0")
    backgrounds = partition.background_ids
    k_eff = min(k, len(backgrounds))
    if k_eff < k and clamp_log is not None:
        clamp_log.append(("bgp", k, k_eff))
    order = _rank_for_removal(backgrounds, scores)
    removed = {backgrounds[i] for i in order[:k_eff]}
    return [v for v in partition.all_ids if v not in removed]


def btp_prune(topo_map, k_btp: int):
    """Cap the unvisited node set at the k_btp highest latest scores.

    Ties keep the earlier-discovered node.  Visited nodes and the current
    node are untouched; adjacency is restricted to survivors.  Returns a
    pruned copy, leaving the input map intact.
    """
    if k_btp < 0:
        raise ValueError("k_btp must be >= 0")
    pruned = copy.deepcopy(topo_map)
    unvisited = [n for n, node in pruned.nodes.items() if node.status == "unvisited"]
    if len(unvisited) <= k_btp:
        return pruned
    ranked = sorted(
        unvisited,
        key=lambda n: (-pruned.nodes[n].latest_score, pruned.nodes[n].discovery_step, n),
    )
    dropped = set(ranked[k_btp:])
    for n in dropped:
        del pruned.nodes[n]
        pruned.adjacency.pop(n, None)
    for n in pruned.adjacency:
        pruned.adjacency[n] -= dropped
    return pruned


def vpp_prune(tokens: Sequence, vocab, scores: dict, k: int) -> list:
    """Vocabulary-priority pruning of instruction tokens.

    Tokens whose normalized text belongs to the irrelevance vocabulary
    (the trailing end delimiter counts as a member) are pruned first,
    lowest score first.  When the budget exceeds the member count, the
    shortfall comes from the lowest-scoring non-members.  When members
    exceed the budget, the highest-scoring members are reinstated.  The
    leading start delimiter is never prunable.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    prunable = [t for t in tokens if t.kind != "bos"]
    if k > len(prunable):
        raise ValueError("budget exceeds prunable tokens")

    def is_member(tok) -> bool:
        return tok.kind == "eos" or tok.text in vocab

    order = {id(t): i for i, t in enumerate(tokens)}
    members = [t for t in prunable if is_member(t)]
    others = [t for t in prunable if not is_member(t)]

    def removal_rank(toks):
        return sorted(toks, key=lambda t: (scores.get(t.token_id, 0.0), order[id(t)]))

    if len(members) >= k:
        removed = removal_rank(members)[:k]
    else:
        removed = list(members) + removal_rank(others)[: k - len(members)]
    removed_ids = {id(t) for t in removed}
    return [t for t in tokens if id(t) not in removed_ids]


def cascade_prune(ids: Sequence, cumulative_scores: dict, k: int, protected: Sequence = ()) -> list:
    """Drop the k lowest by score accumulated over the layers seen so far."""
    if k < 0:
        raise ValueError("k must be >= 0")
    shield = set(protected)
    prunable = [t for t in ids if t not in shield]
    k_eff = min(k, len(prunable))
    order = _rank_for_removal(prunable, cumulative_scores)
    removed = {prunable[i] for i in order[:k_eff]}
    return [t for t in ids if t not in removed]


def fastv_prune(
    ids: Sequence,
    scores_at_layer: dict,
    prune_layer: int,
    total_k: int,
    *,
    layer_index: int | None = None,
    protected: Sequence = (),
    clamp_log: list | None = None,
) -> list:
    """Single-shot removal of the total budget at one layer (1-based).

    Layers before ``prune_layer`` are untouched, later layers see the
    shortened sequence.  When ``layer_index`` (0-based) is given, the
    removal fires only when ``layer_index + 1 == prune_layer``.
    """
    if total_k < 0:
        raise ValueError("total_k must be >= 0")
    if layer_index is not None and layer_index + 1 != prune_layer:
        return list(ids)
    shield = set(protected)
    prunable = [t for t in ids if t not in shield]
    k_eff = min(total_k, len(prunable))
    if k_eff < total_k and clamp_log is not None:
        clamp_log.append(("fastv", total_k, k_eff))
    order = _rank_for_removal(prunable, scores_at_layer)
    removed = {prunable[i] for i in order[:k_eff]}
    return [t for t in ids if t not in removed]


def tome_pairs(
    ids: Sequence, features: np.ndarray, m: int, protected: Sequence = ()
) -> list[tuple]:
    """Bipartite soft matching: pair alternating sets by cosine, take top m.

    Mergeable tokens alternate into sets A and B; every A token is paired
    with its most similar B token and the m highest-similarity pairs are
    merged (A sources into B destinations).  Returns (dst_id, src_id)
    pairs; m clamps to the smaller set.
    """
    shield = set(protected)
    positions = [i for i, t in enumerate(ids) if t not in shield]
    a_pos = positions[0::2]
    b_pos = positions[1::2]
    m_eff = min(m, len(a_pos), len(b_pos))
    if m_eff <= 0:
        return []
    feats = np.asarray(features, dtype=float)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    unit = feats / np.maximum(norms, 1e-12)
    sims = unit[a_pos] @ unit[b_pos].T
    best_b = sims.argmax(axis=1)
    best_score = sims[np.arange(len(a_pos)), best_b]
    # highest-similarity pairs merge first; ties merge the lower-index source
    order = sorted(range(len(a_pos)), key=lambda i: (-best_score[i], a_pos[i]))
    pairs = []
    for i in order[:m_eff]:
        pairs.append((ids[b_pos[best_b[i]]], ids[a_pos[i]]))
    return pairs


def tome_merge(seq: FeatureSeq, merges: int, protected: Sequence = ()) -> FeatureSeq:
    """Merge the top pairs by unweighted feature averaging; origins union."""
    pairs = tome_pairs(seq.ids, seq.features, merges, protected)
    if not pairs:
        return seq
    groups: dict = {}
    for dst, src in pairs:
        groups.setdefault(dst, []).append(src)
    index = {t: i for i, t in enumerate(seq.ids)}
    sources = {s for srcs in groups.values() for s in srcs}
    new_ids, new_rows, new_origins = [], [], []
    for i, t in enumerate(seq.ids):
        if t in sources:
            continue
        if t in groups:
            rows = [i] + [index[s] for s in groups[t]]
            new_rows.append(seq.features[rows].mean(axis=0))
            new_origins.append(tuple(sorted({o for j in rows for o in seq.origins[j]})))
        else:
            new_rows.append(seq.features[i])
            new_origins.append(seq.origins[i])
        new_ids.append(t)
    return FeatureSeq(new_ids, np.array(new_rows), new_origins)


def random_prune(ids: Sequence, k: int, rng: np.random.Generator, protected: Sequence = ()) -> list:
    """Uniform random removal among prunable tokens (seeded by the caller)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    shield = set(protected)
    prunable = [t for t in ids if t not in shield]
    k_eff = min(k, len(prunable))
    picks = rng.choice(len(prunable), size=k_eff, replace=False) if k_eff else []
    removed = {prunable[i] for i in picks}
    return [t for t in ids if t not in removed]


def sas_mask(partition: ViewPartition) -> tuple:
    """Query-skip set: background views stop issuing attention queries."""
    return tuple(partition.background_ids)
