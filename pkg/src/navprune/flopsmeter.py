"""Analytic FLOP model of the encoder stacks and episode-level cost ledger.

Counting convention (fixed, published in every output header):
  * 1 multiply-add = 2 FLOPs, matmuls only
  * attention: the two sequence-level matmuls, QK^T and Attn x V
  * projections: Q, K, V, output = four d x d matrices per token
  * feed-forward: d -> ffn_mult*d -> d
  * softmax, layernorm, and bias costs excluded

Under this convention full attention costs 4*l^2*d FLOPs per layer and a
query-restricted pass over l_act rows costs 4*l_act*l*d.  All counts are
exact integers and must match the encoder's instrumented multiply-add
counter with no tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

FLOPS_PER_MAC = 2


@dataclass(frozen=True)
class CountingConvention:
    flops_per_mac: int = FLOPS_PER_MAC
    attention_matmuls: str = "QK^T and Attn*V"
    projections: str = "Q,K,V,output (4 x d*d per token)"
    feed_forward: str = "d -> ffn_mult*d -> d"
    excluded: str = "softmax, layernorm, bias"

    def header_lines(self) -> list[str]:
        return [
            f"flops_per_mac={self.flops_per_mac}",
            f"attention={self.attention_matmuls}",
            f"projections={self.projections}",
            f"feed_forward={self.feed_forward}",
            f"excluded={self.excluded}",
        ]


DEFAULT_CONVENTION = CountingConvention()


def attention_flops(l: int, d: int) -> int:
    """Full self-attention cost for one layer: 4 * l^2 * d."""
    if l < 1 or d < 1:
        raise ValueError("l and d must be positive")
    return 4 * l * l * d


def sas_attention_flops(l: int, l_act: int, d: int) -> int:
    """Attention cost when only l_act query rows are computed: 4 * l_act * l * d."""
    if l < 1 or d < 1:
        raise ValueError("l and d must be positive")
    if not 1 <= l_act <= l:
        raise ValueError("l_act must satisfy 1 <= l_act <= l")
    return 4 * l_act * l * d


def layer_flops(l: int, d: int, ffn_mult: int = 4) -> int:
    """One transformer layer at uniform length l: projections + attention + FFN."""
    if l < 1 or d < 1 or ffn_mult < 1:
        raise ValueError("arguments must be positive")
    return 8 * l * d * d + attention_flops(l, d) + 4 * ffn_mult * l * d * d


def _layer_flops_split(l_in: int, l_out: int, d: int, ffn_mult: int, l_q: int | None = None) -> int:
    """Layer cost when pruning shrinks the sequence mid-layer.

    Projections and attention run on the layer's input length; the
    feed-forward block runs on what survived the pruning hook.  l_q
    restricts attention query rows (query-skip masking).
    """
    attn = attention_flops(l_in, d) if l_q is None else sas_attention_flops(l_in, l_q, d)
    return 8 * l_in * d * d + attn + 4 * ffn_mult * l_out * d * d


def stack_flops(
    lengths: Sequence[int],
    d: int,
    ffn_mult: int = 4,
    query_counts: Sequence[int] | None = None,
) -> int:
    """Exact cost of a stack run given its length schedule.

    ``lengths`` has layers+1 entries: the input length of each layer
    followed by the final output length, so mid-layer removals are
    charged correctly (no feed-forward cost for tokens pruned after
    attention).  ``query_counts`` optionally gives per-layer attention
    query-row counts for query-skip masked runs.
    """
    if len(lengths) < 2:
        raise ValueError("lengths needs at least (input, output) entries")
    layers = len(lengths) - 1
    if query_counts is not None and len(query_counts) != layers:
        raise ValueError("query_counts must have one entry per layer")
    total = 0
    for i in range(layers):
        l_q = None if query_counts is None else query_counts[i]
        total += _layer_flops_split(lengths[i], lengths[i + 1], d, ffn_mult, l_q)
    return total


@dataclass
class FlopsLedger:
    """Episode cost ledger with exact integer FLOP totals.

    ``lan_flops`` is paid once per episode; ``vis_flops`` and ``cm_flops``
    are totals accumulated over all ``steps`` panorama/cross-modal
    encodes.  The GFLOP properties expose the decomposition
    g_total = g_lan + steps * (g_vis + g_cm) + c, composed from per-step
    averages so the identity holds exactly as written.
    """

    lan_flops: int
    vis_flops: int
    cm_flops: int
    steps: int
    overhead_flops: int = 0
    convention: CountingConvention = field(default=DEFAULT_CONVENTION)

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def total_flops(self) -> int:
        return self.lan_flops + self.vis_flops + self.cm_flops + self.overhead_flops

    @property
    def g_lan(self) -> float:
        return self.lan_flops / 1e9

    @property
    def g_vis(self) -> float:
        return self.vis_flops / self.steps / 1e9

    @property
    def g_cm(self) -> float:
        return self.cm_flops / self.steps / 1e9

    @property
    def c(self) -> float:
        return self.overhead_flops / 1e9

    @property
    def g_total(self) -> float:
        return self.g_lan + self.steps * (self.g_vis + self.g_cm) + self.c

    def summary(self) -> str:
        return (
            f"g_lan={self.g_lan:.6f} g_vis={self.g_vis:.6f} g_cm={self.g_cm:.6f} "
            f"steps={self.steps} c={self.c:.6f} g_total={self.g_total:.6f} "
            f"total_flops={self.total_flops}"
        )


def g_total(
    instr_lens: Sequence[int],
    view_lens_per_step: Sequence[Sequence[int]],
    hist_lens_per_step: Sequence[int],
    dims: dict,
    c: int = 0,
    view_query_counts_per_step: Sequence[Sequence[int]] | None = None,
) -> FlopsLedger:
    """Compose the episode ledger from per-stack length schedules.

    ``dims`` maps "lan"/"vis"/"cm" to (layers, hidden_dim, ffn_mult).
    The cross-modal stack at each step runs at constant length
    retained-instruction + retained-views + history.
    """
    if len(view_lens_per_step) != len(hist_lens_per_step):
        raise ValueError("view and history schedules must cover the same steps")
    if not view_lens_per_step:
        raise ValueError("at least one step is required")

    lan_layers, lan_d, lan_f = dims["lan"]
    vis_layers, vis_d, vis_f = dims["vis"]
    cm_layers, cm_d, cm_f = dims["cm"]
    if len(instr_lens) != lan_layers + 1:
        raise ValueError("instruction schedule does not match language stack depth")

    lan = stack_flops(instr_lens, lan_d, lan_f)
    instr_final = instr_lens[-1]

    vis = 0
    cm = 0
    for t, view_lens in enumerate(view_lens_per_step):
        if len(view_lens) != vis_layers + 1:
            raise ValueError("view schedule does not match view stack depth")
        qc = None if view_query_counts_per_step is None else view_query_counts_per_step[t]
        vis += stack_flops(view_lens, vis_d, vis_f, query_counts=qc)
        cm_len = instr_final + view_lens[-1] + hist_lens_per_step[t]
        cm += stack_flops([cm_len] * (cm_layers + 1), cm_d, cm_f)

    return FlopsLedger(
        lan_flops=lan,
        vis_flops=vis,
        cm_flops=cm,
        steps=len(view_lens_per_step),
        overhead_flops=c,
    )


def flops_percent(pruned: FlopsLedger, original: FlopsLedger) -> float:
    """Pruned-to-original cost ratio in percent; can exceed 100 when steps grow."""
    if original.total_flops == 0:
        raise ValueError("original ledger has zero total FLOPs")
    return 100.0 * pruned.total_flops / original.total_flops
