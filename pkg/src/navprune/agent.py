"""Episode loop: deterministic feature-matching navigation over pruned inputs.

The policy is a transparent stand-in for a trained navigator: it matches
raw action-view features against the embedding of the next unmatched
relevant instruction token (cosine), discounts backtracking targets by
hop distance, and stops at a fixed threshold or when the instruction is
exhausted.  The encoder stacks run alongside purely to produce attention
importance scores and exact computation costs; navigation never reads
their outputs' feature values.

Every panorama processing event counts as one step: ordinary moves take
one, a backtrack jump pays one per traversed hop, and the final stop
decision pays one.  The FLOPs ledger charges the view and cross-modal
stacks per step, which is what makes pruning-induced wandering expensive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .encoder import EncoderWeights, FeatureSeq, HookResult, OpCounter, init_weights
from .encoder import EncoderConfig, run_stack
from .flopsmeter import FlopsLedger, g_total
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
    tome_pairs,
    vpp_prune,
)
from .worldgen import (
    HouseGraph,
    OracleConfig,
    SyntheticInstruction,
    Token,
    World,
    importance_oracle,
    subseed,
    view_importance_oracle,
)


@dataclass
class MapNode:
    status: str  # "visited" | "unvisited"
    feature: np.ndarray
    latest_score: float
    discovery_step: int


class TopoMap:
    """Discovered topology: visited/unvisited nodes, scores, adjacency."""

    def __init__(self, start: int, feature: np.ndarray) -> None:
        self.nodes: dict[int, MapNode] = {
            start: MapNode("visited", np.asarray(feature, dtype=float), 0.0, 0)
        }
        self.adjacency: dict[int, set[int]] = {start: set()}
        self.current = start

    def unvisited_ids(self) -> list[int]:
        return [n for n in sorted(self.nodes) if self.nodes[n].status == "unvisited"]

    def unvisited_count(self) -> int:
        return sum(1 for node in self.nodes.values() if node.status == "unvisited")

    def add_edge(self, a: int, b: int) -> None:
        self.adjacency.setdefault(a, set()).add(b)
        self.adjacency.setdefault(b, set()).add(a)

    def insert_or_refresh(self, node_id: int, feature: np.ndarray, score: float, step: int) -> None:
        """New nodes enter as unvisited; re-observation overwrites the score."""
        known = self.nodes.get(node_id)
        if known is None:
            self.nodes[node_id] = MapNode("unvisited", np.asarray(feature, dtype=float), score, step)
            self.adjacency.setdefault(node_id, set())
        elif known.status == "unvisited":
            known.feature = np.asarray(feature, dtype=float)
            known.latest_score = score
        # visited nodes are left alone

    def visit(self, node_id: int, feature: np.ndarray | None = None, step: int = 0) -> None:
        known = self.nodes.get(node_id)
        if known is None:
            if feature is None:
                raise ValueError("visiting an unknown node requires its feature")
            self.nodes[node_id] = MapNode("visited", np.asarray(feature, dtype=float), 0.0, step)
            self.adjacency.setdefault(node_id, set())
        else:
            known.status = "visited"
        self.current = node_id

    def hops(self, a: int, b: int) -> int:
        if a == b:
            return 0
        seen = {a}
        frontier = [a]
        dist = 0
        while frontier:
            dist += 1
            nxt = []
            for n in frontier:
                for m in sorted(self.adjacency.get(n, ())):
                    if m == b:
                        return dist
                    if m not in seen:
                        seen.add(m)
                        nxt.append(m)
            frontier = nxt
        return -1

    def shortest_route(self, a: int, b: int) -> list[int]:
        """Nodes to traverse from a to b, excluding a, over discovered edges."""
        if a == b:
            return []
        parent: dict[int, int] = {a: a}
        frontier = [a]
        while frontier:
            nxt = []
            for n in frontier:
                for m in sorted(self.adjacency.get(n, ())):
                    if m not in parent:
                        parent[m] = n
                        if m == b:
                            route = [m]
                            while parent[route[-1]] != a:
                                route.append(parent[route[-1]])
                            return list(reversed(route))
                        nxt.append(m)
            frontier = nxt
        raise ValueError(f"no discovered route from {a} to {b}")


@dataclass(frozen=True)
class PolicyParams:
    gamma: float = 0.9  # backtrack distance discount per hop
    tau: float = 0.95  # match threshold for advancing the instruction pointer
    theta_stop: float = 0.5


@dataclass(frozen=True)
class ActionChoice:
    kind: str  # "stop" | "navigate" | "backtrack"
    target: object  # view id for navigate, node id for backtrack, None for stop
    score: float


@dataclass
class EpisodeState:
    current: int
    pointer: int
    step_index: int


@dataclass
class EpisodePlan:
    """Per-modality strategy assignment for one episode."""

    instruction: StrategySpec | None = None
    views: StrategySpec | None = None
    retain_fraction: float = 1.0
    k_btp: int | None = None
    sas: bool = False
    vocab: object = None  # Vocabulary, required when instruction is vpp

    def __post_init__(self) -> None:
        if self.instruction is not None and self.instruction.kind == "vpp" and self.vocab is None:
            raise ValueError("vpp instruction pruning requires a vocabulary")


@dataclass(frozen=True)
class EncoderStacks:
    """Language / view / cross-modal stacks sharing one feature width."""

    lan: EncoderWeights
    vis: EncoderWeights
    cm: EncoderWeights

    @classmethod
    def build(
        cls,
        hidden_dim: int,
        heads: int = 2,
        lan_layers: int = 6,
        vis_layers: int = 2,
        cm_layers: int = 3,
        ffn_mult: int = 4,
        seed: int = 0,
    ) -> "EncoderStacks":
        def cfg(layers: int, salt: str) -> EncoderConfig:
            return EncoderConfig(layers, heads, hidden_dim, ffn_mult, subseed(seed, salt))

        return cls(
            lan=init_weights(cfg(lan_layers, "lan")),
            vis=init_weights(cfg(vis_layers, "vis")),
            cm=init_weights(cfg(cm_layers, "cm")),
        )

    def dims(self) -> dict:
        return {
            "lan": (self.lan.config.layers, self.lan.config.hidden_dim, self.lan.config.ffn_mult),
            "vis": (self.vis.config.layers, self.vis.config.hidden_dim, self.vis.config.ffn_mult),
            "cm": (self.cm.config.layers, self.cm.config.hidden_dim, self.cm.config.ffn_mult),
        }


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path: list[int]
    flops: FlopsLedger
    prune_log: dict
    trace: list[str]
    stop_node: int | None
    unvisited_log: list[int]


def judge_success(house: HouseGraph, stop_node: int, goal: int, success_hops: int = 0) -> bool:
    """Success iff the stop node is within success_hops of the goal."""
    dist = house.distance(stop_node, goal)
    return 0 <= dist <= success_hops


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


_KIND_RANK = {"stop": 0, "navigate": 1, "backtrack": 2}


def step(
    state: EpisodeState,
    instruction_targets: Sequence[Token],
    panorama_views: Sequence,
    topo: TopoMap,
    policy: PolicyParams,
    view_scores: dict,
) -> ActionChoice:
    """Score stop / navigate / backtrack and pick the argmax.

    navigate(view) = cosine(view feature, pointer token embedding);
    backtrack(node) = the same cosine times gamma^hops; stop is a fixed
    threshold, forced once the pointer runs past the last retained
    relevant token.  Ties prefer stop over navigate over backtrack, then
    the lower target id.  Unchosen action views are inserted into the map
    as unvisited with this step's view importance scores.
    """
    if state.current != topo.current:
        raise ValueError("malformed state: current node disagrees with the map")
    action_views = [v for v in panorama_views if v.kind == "action"]
    forced_stop = state.pointer >= len(instruction_targets)

    if forced_stop:
        best = ActionChoice("stop", None, policy.theta_stop)
    else:
        target = instruction_targets[state.pointer].embedding
        candidates: list[tuple[str, object, float]] = [("stop", None, policy.theta_stop)]
        for v in action_views:
            candidates.append(("navigate", v.view_id, _cosine(v.feature, target)))
        for n in topo.unvisited_ids():
            hops = topo.hops(topo.current, n)
            if hops < 0:
                continue
            match = _cosine(topo.nodes[n].feature, target)
            candidates.append(("backtrack", n, match * policy.gamma**hops))
        kind, tgt, score = min(
            candidates, key=lambda c: (-c[2], _KIND_RANK[c[0]], () if c[1] is None else (c[1],))
        )
        best = ActionChoice(kind, tgt, score)

    chosen_dest = None
    if best.kind == "navigate":
        chosen_dest = next(v.dest for v in action_views if v.view_id == best.target)
    for v in action_views:
        topo.add_edge(state.current, v.dest)
        if v.dest == chosen_dest:
            continue
        topo.insert_or_refresh(v.dest, v.feature, view_scores.get(v.view_id, 0.0), state.step_index)
    return best


@dataclass
class _StackLog:
    lengths: list[int] = field(default_factory=list)
    removals: list[int] = field(default_factory=list)
    query_counts: list[int] = field(default_factory=list)
    clamps: list = field(default_factory=list)

    def schedule(self) -> list[int]:
        if not self.lengths:
            return []
        return self.lengths + [self.lengths[-1] - self.removals[-1]]


def _logging_hook(inner, log: _StackLog, skip: frozenset | None):
    def hook(layer_index: int, seq: FeatureSeq, scores: dict) -> HookResult:
        log.lengths.append(len(seq))
        if skip is not None:
            log.query_counts.append(sum(1 for t in seq.ids if t not in skip))
        result = inner(layer_index, seq, scores) if inner is not None else HookResult()
        removed = len(result.remove) + sum(len(srcs) for _, srcs in result.merge)
        log.removals.append(removed)
        return result

    return hook


def _fastv_layer(spec: StrategySpec, layers: int, clamps: list) -> int:
    """1-based single-shot layer; must stay below the stack depth."""
    wanted = spec.params.get("prune_layer", 2)
    limit = max(layers - 1, 1)
    if wanted > limit:
        clamps.append(("fastv-layer", wanted, limit))
        return limit
    return wanted


def _instruction_hook(
    spec: StrategySpec | None,
    budget: PruneBudget,
    tokens: Sequence[Token],
    vocab,
    effective,
    rng: np.random.Generator,
    log: _StackLog,
):
    if spec is None:
        return None
    bos_ids = {t.token_id for t in tokens if t.kind == "bos"}
    by_id = {t.token_id: t for t in tokens}
    cumulative: dict = {}
    layers = len(budget.per_layer_removals)
    prune_layer = _fastv_layer(spec, layers, log.clamps) if spec.kind == "fastv" else None

    def inner(layer_index: int, seq: FeatureSeq, live: dict) -> HookResult:
        scores = effective(live)
        if spec.kind == "vpp":
            k = budget.per_layer_removals[layer_index]
            if k == 0:
                return HookResult()
            current = [by_id[i] for i in seq.ids]
            keep = {t.token_id for t in vpp_prune(current, vocab, scores, k)}
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "cascade":
            for t in seq.ids:
                cumulative[t] = cumulative.get(t, 0.0) + scores.get(t, 0.0)
            k = budget.per_layer_removals[layer_index]
            keep = set(cascade_prune(seq.ids, cumulative, k, protected=bos_ids))
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "fastv":
            keep = set(
                fastv_prune(
                    seq.ids,
                    scores,
                    prune_layer,
                    budget.total,
                    layer_index=layer_index,
                    protected=bos_ids,
                    clamp_log=log.clamps,
                )
            )
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "random":
            k = budget.per_layer_removals[layer_index]
            keep = set(random_prune(seq.ids, k, rng, protected=bos_ids))
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        raise ValueError(f"strategy {spec.kind!r} cannot prune instructions")

    return inner


def _view_hook(
    spec: StrategySpec | None,
    budget: PruneBudget,
    partition: ViewPartition,
    effective,
    rng: np.random.Generator,
    log: _StackLog,
):
    if spec is None:
        return None
    action_set = set(partition.action_ids)
    protected = action_set if spec.protect_action_views else set()
    cumulative: dict = {}
    layers = len(budget.per_layer_removals)
    prune_layer = _fastv_layer(spec, layers, log.clamps) if spec.kind == "fastv" else None

    def inner(layer_index: int, seq: FeatureSeq, live: dict) -> HookResult:
        scores = effective(live)
        k = budget.per_layer_removals[layer_index]
        if spec.kind == "bgp":
            if k == 0:
                return HookResult()
            current = ViewPartition(
                tuple(i for i in seq.ids if i in action_set),
                tuple(i for i in seq.ids if i not in action_set),
            )
            keep = set(bgp_prune(current, scores, k, clamp_log=log.clamps))
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "cascade":
            for t in seq.ids:
                cumulative[t] = cumulative.get(t, 0.0) + scores.get(t, 0.0)
            keep = set(cascade_prune(seq.ids, cumulative, k, protected=protected))
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "fastv":
            keep = set(
                fastv_prune(
                    seq.ids,
                    scores,
                    prune_layer,
                    budget.total,
                    layer_index=layer_index,
                    protected=protected,
                    clamp_log=log.clamps,
                )
            )
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "random":
            keep = set(random_prune(seq.ids, k, rng, protected=protected))
            return HookResult(remove=tuple(i for i in seq.ids if i not in keep))
        if spec.kind == "tome":
            pairs = tome_pairs(seq.ids, seq.features, k, protected=protected)
            return HookResult(merge=tuple((dst, (src,)) for dst, src in pairs))
        raise ValueError(f"strategy {spec.kind!r} cannot prune views")

    return inner


class _Scores:
    """Importance score source: live attention sums or the world oracles."""

    def __init__(self, mode: str, world: World, oracle_cfg: OracleConfig, episode_seed: int):
        if mode not in ("oracle", "attention"):
            raise ValueError("importance mode must be 'oracle' or 'attention'")
        self.mode = mode
        self.world = world
        self.cfg = oracle_cfg
        self.seed = episode_seed
        if mode == "oracle":
            self.instr = importance_oracle(
                world.instruction, replace(oracle_cfg, seed=subseed(episode_seed, "oracle-instr"))
            )
        self._view_cache: dict[int, dict] = {}

    def instruction_effective(self):
        if self.mode == "oracle":
            static = self.instr
            return lambda live: static
        return lambda live: live

    def view_scores(self, node: int) -> dict:
        if node not in self._view_cache:
            self._view_cache[node] = view_importance_oracle(
                self.world.house,
                self.world.panorama,
                node,
                self.cfg,
                seed=subseed(self.seed, "oracle-view", node),
            )
        return self._view_cache[node]

    def view_effective(self, node: int):
        if self.mode == "oracle":
            static = self.view_scores(node)
            return lambda live: static
        return lambda live: live


def run_episode(
    world: World,
    plan: EpisodePlan,
    *,
    stacks: EncoderStacks | None = None,
    episode_seed: int = 0,
    importance: str = "oracle",
    oracle: OracleConfig | None = None,
    policy: PolicyParams | None = None,
    t_max: int | None = None,
    success_hops: int = 0,
    counters: dict | None = None,
) -> EpisodeResult:
    """Run one episode under a pruning plan and return the full accounting."""
    stacks = stacks if stacks is not None else EncoderStacks.build(world.hidden_dim)
    policy = policy if policy is not None else PolicyParams()
    oracle_cfg = oracle if oracle is not None else OracleConfig(sigma_feat=world.panorama.sigma_feat)
    if t_max is None:
        t_max = 3 * len(world.house.gt_path)
    counters = counters or {}
    scores = _Scores(importance, world, oracle_cfg, episode_seed)
    rng_instr = np.random.default_rng(subseed(episode_seed, "random-instr"))
    rng_views = np.random.default_rng(subseed(episode_seed, "random-views"))

    # -- encode the instruction once per episode --
    tokens = world.instruction.tokens
    tok_by_id = {t.token_id: t for t in tokens}
    instr_budget = schedule_budget(
        plan.retain_fraction, stacks.lan.config.layers, len(tokens), "instruction"
    )
    instr_log = _StackLog()
    inner = _instruction_hook(
        plan.instruction, instr_budget, tokens, plan.vocab,
        scores.instruction_effective(), rng_instr, instr_log,
    )
    seq = FeatureSeq([t.token_id for t in tokens], np.stack([t.embedding for t in tokens]))
    out, _ = run_stack(
        seq, stacks.lan, _logging_hook(inner, instr_log, None), counter=counters.get("lan")
    )
    retained_ids = set(out.ids)
    targets = [t for t in tokens if t.relevant and t.token_id in retained_ids]
    instr_schedule = instr_log.schedule()

    # -- episode state --
    house = world.house
    topo = TopoMap(house.start, world.panorama.landmarks[house.start])
    state = EpisodeState(current=house.start, pointer=0, step_index=0)
    steps = 0
    path = [house.start]
    pending: list[int] = []
    pending_arrival_match = 0.0
    view_schedules: list[list[int]] = []
    view_qcounts: list[list[int]] = []
    hist_lens: list[int] = []
    view_removals: list[list[int]] = []
    hist_removals: list[int] = []
    unvisited_log: list[int] = []
    clamps: list = list(instr_log.clamps)
    trace: list[str] = []
    success = False
    stop_node: int | None = None

    def advance_pointer_on(match: float) -> None:
        if match >= policy.tau:
            state.pointer += 1

    while True:
        steps += 1
        state.step_index = steps

        hist_removed = 0
        if plan.k_btp is not None:
            before = topo.unvisited_count()
            topo = btp_prune(topo, plan.k_btp)
            hist_removed = before - topo.unvisited_count()
        hist_removals.append(hist_removed)
        unvisited_log.append(topo.unvisited_count())

        node = topo.current
        pano = world.panorama.views[node]
        partition = ViewPartition(
            tuple(v.view_id for v in pano if v.kind == "action"),
            tuple(v.view_id for v in pano if v.kind == "background"),
        )
        view_budget = schedule_budget(
            plan.retain_fraction, stacks.vis.config.layers, len(pano), "views"
        )
        vlog = _StackLog()
        vinner = _view_hook(
            plan.views, view_budget, partition, scores.view_effective(node), rng_views, vlog
        )
        skip = frozenset(sas_mask(partition)) if plan.sas else None
        vseq = FeatureSeq([v.view_id for v in pano], np.stack([v.feature for v in pano]))
        vout, vlayer_scores = run_stack(
            vseq, stacks.vis, _logging_hook(vinner, vlog, skip),
            skip_queries=skip, counter=counters.get("vis"),
        )
        view_schedules.append(vlog.schedule())
        view_removals.append(list(vlog.removals))
        if plan.sas:
            view_qcounts.append(list(vlog.query_counts))
        clamps.extend(vlog.clamps)

        # cross-modal pass over retained instruction + retained views + history
        hist_ids = sorted(topo.nodes)
        cm_ids = (
            [("w", i) for i in out.ids]
            + [("v",) + vid for vid in vout.ids]
            + [("h", n) for n in hist_ids]
        )
        views_by_id = {v.view_id: v for v in pano}
        cm_feats = np.stack(
            [tok_by_id[i].embedding for i in out.ids]
            + [views_by_id[vid].feature for vid in vout.ids]
            + [topo.nodes[n].feature for n in hist_ids]
        )
        cm_out, cm_layer_scores = run_stack(
            FeatureSeq(cm_ids, cm_feats), stacks.cm, None, counter=counters.get("cm")
        )
        hist_lens.append(len(hist_ids))

        if importance == "attention":
            last = cm_layer_scores[-1]
            for n in hist_ids:
                topo.nodes[n].latest_score = last[("h", n)]
            insert_scores = {vid: last[("v",) + vid] for vid in vout.ids}
        else:
            insert_scores = scores.view_scores(node)

        if pending:
            nxt = pending.pop(0)
            topo.add_edge(node, nxt)
            topo.visit(nxt, world.panorama.landmarks[nxt], steps)
            state.current = nxt
            path.append(nxt)
            trace.append(
                f"{steps} traverse {nxt} {pending_arrival_match:.4f} "
                f"instr={len(out.ids)} views={len(vout.ids)} unvisited={unvisited_log[-1]}"
            )
            if not pending:
                advance_pointer_on(pending_arrival_match)
            if steps >= t_max:
                steps = t_max
                break
            continue

        retained_views = [views_by_id[vid] for vid in vout.ids]
        choice = step(state, targets, retained_views, topo, policy, insert_scores)
        trace.append(
            f"{steps} {choice.kind} {choice.target} {choice.score:.4f} "
            f"instr={len(out.ids)} views={len(vout.ids)} unvisited={unvisited_log[-1]}"
        )

        if choice.kind == "stop":
            stop_node = node
            success = judge_success(house, node, house.goal, success_hops)
            break
        if choice.kind == "navigate":
            view = views_by_id[choice.target]
            topo.visit(view.dest, view.feature, steps)
            state.current = view.dest
            path.append(view.dest)
            advance_pointer_on(choice.score)
        else:  # backtrack: commit to the shortest discovered route
            target_node = choice.target
            pending_arrival_match = _cosine(
                topo.nodes[target_node].feature, targets[state.pointer].embedding
            )
            route = topo.shortest_route(node, target_node)
            first = route[0]
            topo.add_edge(node, first)
            topo.visit(first, world.panorama.landmarks[first], steps)
            state.current = first
            path.append(first)
            pending = route[1:]
            if not pending:
                advance_pointer_on(pending_arrival_match)
        if steps >= t_max:
            steps = t_max
            break

    ledger = g_total(
        instr_schedule,
        view_schedules,
        hist_lens,
        stacks.dims(),
        c=0,
        view_query_counts_per_step=view_qcounts if plan.sas else None,
    )
    prune_log = {
        "instruction": list(instr_log.removals),
        "views": view_removals,
        "history": hist_removals,
        "clamps": clamps,
    }
    return EpisodeResult(
        success=success,
        steps=steps,
        path=path,
        flops=ledger,
        prune_log=prune_log,
        trace=trace,
        stop_node=stop_node,
        unvisited_log=unvisited_log,
    )
