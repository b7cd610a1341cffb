"""Command-line harness: vocabulary builds, world generation, episodes,
sweeps, and the analytic FLOPs report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench
from .agent import run_episode
from .flopsmeter import DEFAULT_CONVENTION, attention_flops, layer_flops, sas_attention_flops
from .vocabulary import (
    ClassificationCache,
    LlmClient,
    build_from_corpus,
    load_vocabulary,
    save_vocabulary,
)
from .worldgen import OracleConfig, build_world, load_world, save_world


def _cmd_build_vocab(args) -> int:
    corpus = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    corpus = [line for line in corpus if line.strip()]
    cache = ClassificationCache(args.cache) if args.cache else None
    client = None if args.offline else LlmClient.from_env()
    vocab = build_from_corpus(
        corpus,
        client=client,
        cache=cache,
        offline=args.offline,
        source=Path(args.corpus).name,
    )
    save_vocabulary(vocab, args.out)
    print(f"vocabulary: {len(vocab)} words -> {args.out} (builder={vocab.builder})")
    return 0


def _cmd_gen_world(args) -> int:
    world = build_world(
        args.seed,
        n_nodes=args.nodes,
        path_len=args.path_len,
        max_degree=args.max_degree,
        hidden_dim=args.hidden_dim,
        n_views=args.views,
        sigma_feat=args.sigma_feat,
        filler_rate=args.filler_rate,
        extra_edge_fraction=args.extra_edge_fraction,
        twin_fraction=args.twin_fraction,
    )
    save_world(world, args.out)
    print(
        f"world: {world.house.n_nodes} nodes, path {len(world.house.gt_path)} nodes, "
        f"{len(world.instruction)} instruction tokens -> {args.out}"
    )
    return 0


def _cmd_run_episode(args) -> int:
    world = load_world(args.world)
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    plan = bench.make_plan(args.strategy, args.retain, args.k_btp, vocab)
    oracle = OracleConfig(
        sigma_feat=world.panorama.sigma_feat, p_flip=args.p_flip, boost=args.boost
    )
    result = run_episode(
        world,
        plan,
        episode_seed=args.seed,
        importance=args.importance,
        oracle=oracle,
        success_hops=args.success_hops,
    )
    for line in result.trace:
        print(line)
    print(f"success={result.success} steps={result.steps} stop={result.stop_node}")
    print(
        "prune_log instruction="
        + str(result.prune_log["instruction"])
        + f" views_total={sum(sum(v) for v in result.prune_log['views'])}"
        + f" history_total={sum(result.prune_log['history'])}"
    )
    print("ledger " + result.flops.summary())
    return 0


def _cmd_sweep(args) -> int:
    cfg = bench.load_config(args.config)
    results = bench.run_sweep(cfg, jobs=args.jobs)
    csv_path, json_path = bench.write_outputs(cfg, results, args.out)
    print(f"{len(results)} cells -> {csv_path} {json_path}")
    return 0


def _cmd_flops(args) -> int:
    for line in DEFAULT_CONVENTION.header_lines():
        print(f"# {line}")
    attn = attention_flops(args.l, args.d)
    print(f"attention_flops(l={args.l}, d={args.d}) = {attn} ({attn / 1e9:.6g} GFLOPs)")
    layer = layer_flops(args.l, args.d, args.ffn_mult)
    print(f"layer_flops(l={args.l}, d={args.d}, ffn_mult={args.ffn_mult}) = {layer} ({layer / 1e9:.6g} GFLOPs)")
    if args.l_act is not None:
        sas = sas_attention_flops(args.l, args.l_act, args.d)
        print(f"sas_attention_flops(l={args.l}, l_act={args.l_act}, d={args.d}) = {sas} ({sas / 1e9:.6g} GFLOPs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navprune",
        description="Navigation-aware token pruning testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary of irrelevance from a corpus")
    p.add_argument("--corpus", required=True, help="text file, one instruction per line")
    p.add_argument("--out", required=True)
    p.add_argument("--offline", action="store_true", help="skip the service, use the fallback")
    p.add_argument("--cache", default=None, help="classification cache file")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("gen-world", help="generate a synthetic navigation world")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--path-len", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--sigma-feat", type=float, default=0.0)
    p.add_argument("--filler-rate", type=float, default=0.6)
    p.add_argument("--max-degree", type=int, default=4)
    p.add_argument("--extra-edge-fraction", type=float, default=0.3)
    p.add_argument("--twin-fraction", type=float, default=0.0)
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("run-episode", help="run one episode and print the trace")
    p.add_argument("--world", required=True)
    p.add_argument("--strategy", required=True, help="e.g. none, nap, bgp+btp, cascade, fullview")
    p.add_argument("--retain", type=float, required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--k-btp", type=int, default=6)
    p.add_argument("--importance", choices=("oracle", "attention"), default="oracle")
    p.add_argument("--p-flip", type=float, default=0.0)
    p.add_argument("--boost", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--success-hops", type=int, default=0)
    p.set_defaults(func=_cmd_run_episode)

    p = sub.add_parser("sweep", help="run a seeded strategy x budget sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("flops", help="analytic FLOP report for one layer")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--l-act", type=int, default=None)
    p.add_argument("--ffn-mult", type=int, default=4)
    p.set_defaults(func=_cmd_flops)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
