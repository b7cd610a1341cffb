"""Cost model tests: published calibration values and instrumented equality."""

import numpy as np
import pytest

from navprune.encoder import EncoderConfig, FeatureSeq, HookResult, OpCounter, init_weights, run_stack
from navprune.flopsmeter import (
    FlopsLedger,
    attention_flops,
    flops_percent,
    g_total,
    layer_flops,
    sas_attention_flops,
    stack_flops,
)


def test_attention_flops_published_values():
    assert attention_flops(36, 768) == 3_981_312
    assert abs(attention_flops(36, 768) / 1e9 - 4.0e-3) / 4.0e-3 < 0.01
    assert sas_attention_flops(36, 4, 768) == 442_368
    assert abs(sas_attention_flops(36, 4, 768) / 1e9 - 4.4e-4) / 4.4e-4 < 0.01


def test_sas_equals_full_attention_when_no_skipping():
    assert sas_attention_flops(20, 20, 64) == attention_flops(20, 64)


def test_attention_share_is_projection_dominated():
    share = attention_flops(36, 768) / layer_flops(36, 768, 4)
    assert share < 0.02


def test_halving_length_scales_terms_polynomially():
    d = 128
    attn_full, attn_half = attention_flops(40, d), attention_flops(20, d)
    assert attn_full == 4 * attn_half
    proj_full = layer_flops(40, d) - attn_full
    proj_half = layer_flops(20, d) - attn_half
    assert proj_full == 2 * proj_half


def test_stack_flops_matches_instrumented_counter_random_configs():
    rng = np.random.default_rng(7)
    for trial in range(20):
        layers = int(rng.integers(1, 4))
        heads = int(rng.choice([1, 2, 4]))
        d = int(heads * rng.integers(2, 9))
        ffn = int(rng.integers(1, 5))
        n = int(rng.integers(2, 30))
        cfg = EncoderConfig(layers, heads, d, ffn, seed=trial)
        weights = init_weights(cfg)
        counter = OpCounter()
        seq = FeatureSeq(list(range(n)), rng.standard_normal((n, d)))
        run_stack(seq, weights, counter=counter)
        assert counter.flops == stack_flops([n] * (layers + 1), d, ffn)


def test_stack_flops_matches_counter_with_mid_stack_pruning():
    rng = np.random.default_rng(3)
    cfg = EncoderConfig(3, 2, 8, 4, seed=0)
    weights = init_weights(cfg)
    n = 12
    removals = {0: 3, 1: 2, 2: 1}

    def hook(layer_index, seq, scores):
        return HookResult(remove=tuple(seq.ids[: removals[layer_index]]))

    counter = OpCounter()
    seq = FeatureSeq(list(range(n)), rng.standard_normal((n, 8)))
    run_stack(seq, weights, hook, counter=counter)
    assert counter.flops == stack_flops([12, 9, 7, 6], 8, 4)


def test_stack_flops_matches_counter_with_query_skip():
    rng = np.random.default_rng(5)
    cfg = EncoderConfig(2, 2, 8, 4, seed=1)
    weights = init_weights(cfg)
    n = 10
    skip = [0, 1, 2, 3]
    counter = OpCounter()
    seq = FeatureSeq(list(range(n)), rng.standard_normal((n, 8)))
    run_stack(seq, weights, skip_queries=skip, counter=counter)
    assert counter.flops == stack_flops([n, n, n], 8, 4, query_counts=[6, 6])


def _dims():
    return {"lan": (6, 768, 4), "vis": (2, 768, 4), "cm": (3, 768, 4)}


def test_g_total_single_step_decomposition():
    ledger = g_total([50] * 7, [[36, 36, 36]], [14], _dims())
    assert ledger.steps == 1
    lan = stack_flops([50] * 7, 768, 4)
    vis = stack_flops([36, 36, 36], 768, 4)
    cm = stack_flops([100, 100, 100, 100], 768, 4)
    assert ledger.total_flops == lan + vis + cm
    assert ledger.g_total == ledger.g_lan + ledger.steps * (ledger.g_vis + ledger.g_cm) + ledger.c


def test_g_total_linear_in_steps():
    one = g_total([50] * 7, [[36, 36, 36]], [14], _dims())
    two = g_total([50] * 7, [[36, 36, 36]] * 2, [14, 14], _dims())
    assert two.total_flops - two.lan_flops == 2 * (one.total_flops - one.lan_flops)


def test_flops_percent_identity_and_pathology():
    ledger = g_total([50] * 7, [[36, 36, 36]] * 3, [14] * 3, _dims())
    assert flops_percent(ledger, ledger) == 100.0
    # a pruned run with more steps can exceed 100%
    longer = g_total([50] * 7, [[36, 34, 32]] * 6, [14] * 6, _dims())
    assert flops_percent(longer, ledger) > 100.0


def test_flops_percent_zero_original_rejected():
    ledger = FlopsLedger(0, 0, 0, 1)
    with pytest.raises(ValueError):
        flops_percent(ledger, ledger)


def test_halved_lengths_with_projection_dominance_near_50_percent():
    # d >> l regime: linear projection terms dominate, so halving every
    # sequence length roughly halves the cost
    full = g_total([36] * 7, [[36, 36, 36]] * 4, [36] * 4, _dims())
    half = g_total([18] * 7, [[18, 18, 18]] * 4, [18] * 4, _dims())
    pct = flops_percent(half, full)
    assert abs(pct - 50.0) < 2.0


def test_monotone_in_every_length():
    base = g_total([50] * 7, [[36, 36, 36]] * 2, [14, 14], _dims())
    longer_instr = g_total([51] * 7, [[36, 36, 36]] * 2, [14, 14], _dims())
    longer_views = g_total([50] * 7, [[37, 37, 37], [36, 36, 36]], [14, 14], _dims())
    longer_hist = g_total([50] * 7, [[36, 36, 36]] * 2, [15, 14], _dims())
    for other in (longer_instr, longer_views, longer_hist):
        assert other.total_flops > base.total_flops


def test_ledger_decomposition_identity_exact():
    ledger = g_total([20] * 7, [[12, 11, 10]] * 5, [3, 4, 5, 6, 7], _dims())
    lhs = ledger.g_total
    rhs = ledger.g_lan + ledger.steps * (ledger.g_vis + ledger.g_cm) + ledger.c
    assert lhs == rhs  # exact float equality: composed from the same terms
