"""Seeded episode sweeps across strategies and token budgets.

A sweep runs (strategy x retain-fraction) cells over freshly generated
worlds, scores each cell's success rate / steps / cost ratio against the
unpruned reference run of the same episodes, and emits deterministic CSV
and JSON trade-off tables.  Identical config and seeds produce identical
bytes, serial or parallel: episode results are reduced in episode order
regardless of worker scheduling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .agent import EncoderStacks, EpisodePlan, run_episode
from .flopsmeter import DEFAULT_CONVENTION, flops_percent
from .pruning import StrategySpec
from .vocabulary import Vocabulary, load_vocabulary
from .worldgen import OracleConfig, build_world, subseed

CSV_FORMAT = "navprune-sweep-csv v1"
CSV_COLUMNS = "strategy,retain_fraction,success_rate,ci95,mean_steps,mean_flops_percent,episodes,seed_block"

DEFAULT_FRACTIONS = tuple(round(1.0 - 0.05 * i, 2) for i in range(15))  # 1.00 .. 0.30

_MODALITY_ATOMS = {
    "bgp": ("views", StrategySpec("bgp")),
    "vpp": ("instruction", StrategySpec("vpp")),
    "tome": ("views", StrategySpec("tome")),
    "cascade-instr": ("instruction", StrategySpec("cascade", modalities=("instruction",))),
    "cascade-views": ("views", StrategySpec("cascade", modalities=("views",))),
    "random-instr": ("instruction", StrategySpec("random", modalities=("instruction",))),
    "random-views": ("views", StrategySpec("random", modalities=("views",))),
    "fastv-instr": ("instruction", StrategySpec("fastv", modalities=("instruction",))),
    "fastv-views": ("views", StrategySpec("fastv", modalities=("views",))),
    "fullview": ("views", StrategySpec("fastv", protect_action_views=False, modalities=("views",))),
    "fullview-cascade": (
        "views",
        StrategySpec("cascade", protect_action_views=False, modalities=("views",)),
    ),
}


def strategy_atoms(name: str) -> list[str]:
    atoms = [a.strip() for a in name.split("+") if a.strip()]
    if not atoms:
        raise ValueError("empty strategy name")
    expanded: list[str] = []
    for a in atoms:
        if a == "nap":
            expanded.extend(["bgp", "vpp", "btp"])
        else:
            expanded.append(a)
    return expanded


def make_plan(name: str, retain_fraction: float, k_btp: int, vocab: Vocabulary | None) -> EpisodePlan:
    """Expand a strategy name into a per-modality episode plan.

    Atoms join with '+': e.g. "bgp+btp", "cascade+tome", "nap" (= bgp+
    vpp+btp).  Bare baselines ("random", "cascade", "fastv") prune both
    instruction and views; a later atom overrides an earlier one for the
    same modality.
    """
    instr: StrategySpec | None = None
    views: StrategySpec | None = None
    cap: int | None = None
    sas = False
    for atom in strategy_atoms(name):
        if atom == "none":
            continue
        if atom == "btp":
            cap = k_btp
            continue
        if atom == "sas":
            sas = True
            continue
        if atom in ("random", "cascade", "fastv"):
            instr = StrategySpec(atom, modalities=("instruction",))
            views = StrategySpec(atom, modalities=("views",))
            continue
        if atom in _MODALITY_ATOMS:
            modality, spec = _MODALITY_ATOMS[atom]
            if modality == "instruction":
                instr = spec
            else:
                views = spec
            continue
        raise ValueError(f"unknown strategy atom: {atom!r}")
    if instr is not None and instr.kind == "vpp" and vocab is None:
        raise ValueError("missing vocabulary for VPP")
    return EpisodePlan(
        instruction=instr,
        views=views,
        retain_fraction=retain_fraction,
        k_btp=cap,
        sas=sas,
        vocab=vocab if (instr is not None and instr.kind == "vpp") else None,
    )


@dataclass(frozen=True)
class SweepConfig:
    """Flat sweep configuration; file keys match these field names exactly."""

    seed_block: int = 1234
    episodes: int = 500
    strategies: tuple[str, ...] = ("none",)
    retain_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    nodes: int = 48
    path_len: int = 6
    max_degree: int = 4
    n_views: int = 12
    hidden_dim: int = 16
    sigma_feat: float = 0.05
    filler_rate: float = 0.7
    extra_edge_fraction: float = 0.3
    twin_fraction: float = 0.0
    twin_noise: float = 0.05
    importance: str = "oracle"
    p_flip: float = 0.0
    boost: float = 1.0
    k_btp: int = 6
    heads: int = 2
    lan_layers: int = 6
    vis_layers: int = 2
    cm_layers: int = 3
    ffn_mult: int = 4
    success_hops: int = 0
    t_max_factor: int = 3
    vocab: str = ""
    out: str = ""

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        for f in self.retain_fractions:
            if not 0.0 < f <= 1.0:
                raise ValueError("retain fractions must be in (0, 1]")


def parse_config(text: str) -> SweepConfig:
    """key=value lines; comma lists for strategies and retain_fractions."""
    raw: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()

    kwargs: dict = {}
    by_name = {f.name: f for f in fields(SweepConfig)}
    for key, value in raw.items():
        if key not in by_name:
            raise ValueError(f"unknown config key: {key!r}")
        if key == "strategies":
            kwargs[key] = tuple(s.strip() for s in value.split(",") if s.strip())
        elif key == "retain_fractions":
            kwargs[key] = tuple(float(x) for x in value.split(",") if x.strip())
        elif key in (
            "sigma_feat", "filler_rate", "p_flip", "boost",
            "extra_edge_fraction", "twin_fraction", "twin_noise",
        ):
            kwargs[key] = float(value)
        elif key in ("importance", "vocab", "out"):
            kwargs[key] = value
        else:
            kwargs[key] = int(value)
    return SweepConfig(**kwargs)


def load_config(path: str | Path) -> SweepConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass
class CellResult:
    strategy: str
    retain_fraction: float
    successes: list[bool]
    steps: list[int]
    flops_pct: list[float]
    seed_block: int

    @property
    def episodes(self) -> int:
        return len(self.successes)

    @property
    def success_rate(self) -> float:
        return 100.0 * sum(self.successes) / len(self.successes)

    @property
    def ci95(self) -> float:
        p = sum(self.successes) / len(self.successes)
        return 100.0 * 1.96 * math.sqrt(p * (1.0 - p) / len(self.successes))

    @property
    def mean_steps(self) -> float:
        return sum(self.steps) / len(self.steps)

    @property
    def steps_ci95(self) -> float:
        n = len(self.steps)
        mean = self.mean_steps
        var = sum((s - mean) ** 2 for s in self.steps) / max(n - 1, 1)
        return 1.96 * math.sqrt(var / n)

    @property
    def mean_flops_percent(self) -> float:
        return sum(self.flops_pct) / len(self.flops_pct)


def _stacks_for(cfg: SweepConfig) -> EncoderStacks:
    return EncoderStacks.build(
        cfg.hidden_dim,
        heads=cfg.heads,
        lan_layers=cfg.lan_layers,
        vis_layers=cfg.vis_layers,
        cm_layers=cfg.cm_layers,
        ffn_mult=cfg.ffn_mult,
        seed=subseed(cfg.seed_block, "stacks"),
    )


def _world_for(cfg: SweepConfig, episode: int):
    return build_world(
        subseed(cfg.seed_block, "world", episode),
        n_nodes=cfg.nodes,
        path_len=cfg.path_len,
        max_degree=cfg.max_degree,
        hidden_dim=cfg.hidden_dim,
        n_views=cfg.n_views,
        sigma_feat=cfg.sigma_feat,
        filler_rate=cfg.filler_rate,
        extra_edge_fraction=cfg.extra_edge_fraction,
        twin_fraction=cfg.twin_fraction,
        twin_noise=cfg.twin_noise,
    )


def run_cell(
    cfg: SweepConfig,
    strategy: str,
    fraction: float,
    vocab: Vocabulary | None = None,
    stacks: EncoderStacks | None = None,
) -> CellResult:
    """Run one (strategy, fraction) cell; cost ratios are against the
    unpruned run of the same episode."""
    stacks = stacks if stacks is not None else _stacks_for(cfg)
    oracle = OracleConfig(sigma_feat=cfg.sigma_feat, p_flip=cfg.p_flip, boost=cfg.boost)
    plan = make_plan(strategy, fraction, cfg.k_btp, vocab)
    reference = make_plan("none", 1.0, cfg.k_btp, None)

    successes: list[bool] = []
    steps: list[int] = []
    pcts: list[float] = []
    for e in range(cfg.episodes):
        world = _world_for(cfg, e)
        eseed = subseed(cfg.seed_block, "episode", e)
        t_max = cfg.t_max_factor * len(world.house.gt_path)
        common = dict(
            stacks=stacks,
            episode_seed=eseed,
            importance=cfg.importance,
            oracle=oracle,
            t_max=t_max,
            success_hops=cfg.success_hops,
        )
        res = run_episode(world, plan, **common)
        ref = run_episode(world, reference, **common)
        successes.append(res.success)
        steps.append(res.steps)
        pcts.append(flops_percent(res.flops, ref.flops))
    return CellResult(strategy, fraction, successes, steps, pcts, cfg.seed_block)


def _cell_worker(args) -> CellResult:
    cfg, strategy, fraction, vocab = args
    return run_cell(cfg, strategy, fraction, vocab)


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> list[CellResult]:
    """All cells, sorted (strategy, fraction descending); vocabulary loaded once."""
    vocab: Vocabulary | None = None
    needs_vocab = any(
        atom in ("vpp",) for s in cfg.strategies for atom in strategy_atoms(s)
    )
    if needs_vocab:
        if not cfg.vocab:
            raise ValueError("missing vocabulary for VPP (set vocab=<path> in the config)")
        vocab = load_vocabulary(cfg.vocab)

    cells = [(cfg, s, f, vocab) for s in cfg.strategies for f in cfg.retain_fractions]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_worker, cells))
    else:
        results = [_cell_worker(c) for c in cells]
    results.sort(key=lambda r: (r.strategy, -r.retain_fraction))
    return results


def rows_to_csv(results: Sequence[CellResult]) -> str:
    lines = [
        f"# {CSV_FORMAT}",
        "# " + " ".join(DEFAULT_CONVENTION.header_lines()),
        f"# columns={CSV_COLUMNS}",
        CSV_COLUMNS,
    ]
    for r in results:
        lines.append(
            f"{r.strategy},{r.retain_fraction:.4f},{r.success_rate:.4f},{r.ci95:.4f},"
            f"{r.mean_steps:.4f},{r.mean_flops_percent:.4f},{r.episodes},{r.seed_block}"
        )
    return "\n".join(lines) + "\n"


def rows_to_json(cfg: SweepConfig, results: Sequence[CellResult]) -> str:
    payload = {
        "format": CSV_FORMAT,
        "config": asdict(cfg),
        "rows": [
            {
                "strategy": r.strategy,
                "retain_fraction": round(r.retain_fraction, 4),
                "success_rate": round(r.success_rate, 4),
                "ci95": round(r.ci95, 4),
                "mean_steps": round(r.mean_steps, 4),
                "mean_flops_percent": round(r.mean_flops_percent, 4),
                "episodes": r.episodes,
                "seed_block": r.seed_block,
            }
            for r in results
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_outputs(cfg: SweepConfig, results: Sequence[CellResult], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    json_path = out / "sweep.json"
    csv_path.write_text(rows_to_csv(results), encoding="utf-8")
    json_path.write_text(rows_to_json(cfg, results), encoding="utf-8")
    return csv_path, json_path
