"""Navigation-aware token pruning testbed.

Library layout:
  encoder     toy self-attention stacks, importance scores, pruning hook
  pruning     strategies (bgp/vpp/btp + baselines) and budget scheduling
  vocabulary  offline vocabulary-of-irrelevance construction
  worldgen    synthetic houses, panoramas, instructions, score oracles
  agent       episode loop, topological map, deterministic policy
  flopsmeter  analytic FLOP model and the episode cost ledger
  bench       seeded sweeps emitting deterministic CSV/JSON tables
  cli         the `navprune` command
"""

from .agent import (
    ActionChoice,
    EncoderStacks,
    EpisodePlan,
    EpisodeResult,
    PolicyParams,
    TopoMap,
    judge_success,
    run_episode,
    step,
)
from .bench import SweepConfig, load_config, make_plan, run_cell, run_sweep
from .encoder import (
    AttentionRecord,
    EncoderConfig,
    EncoderWeights,
    FeatureSeq,
    HookResult,
    OpCounter,
    attention_forward,
    importance_scores,
    init_weights,
    run_stack,
)
from .flopsmeter import (
    CountingConvention,
    FlopsLedger,
    attention_flops,
    flops_percent,
    g_total,
    layer_flops,
    sas_attention_flops,
    stack_flops,
)
from .pruning import (
    PruneBudget,
    StrategySpec,
    ViewPartition,
    bgp_prune,
    btp_prune,
    cascade_prune,
    fastv_prune,
    random_prune,
    sas_mask,
    schedule_budget,
    tome_merge,
    vpp_prune,
)
from .vocabulary import (
    ClassificationCache,
    ClassificationRecord,
    Lexicon,
    LlmClient,
    Vocabulary,
    build_from_corpus,
    build_vocabulary,
    classify_words,
    extract_lexicon,
    fallback_classify,
    load_vocabulary,
    normalize_word,
    save_vocabulary,
)
from .worldgen import (
    HouseGraph,
    OracleConfig,
    PanoramaSpec,
    SyntheticInstruction,
    Token,
    World,
    build_world,
    generate_house,
    generate_instruction,
    generate_panoramas,
    importance_oracle,
    load_world,
    save_world,
    view_importance_oracle,
)

__version__ = "0.1.0"
