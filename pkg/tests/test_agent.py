"""Episode loop tests: policy correctness, forced stops, map discipline."""

import dataclasses

import numpy as np
import pytest

from navprune.agent import (
    EncoderStacks,
    EpisodePlan,
    EpisodeState,
    PolicyParams,
    TopoMap,
    judge_success,
    run_episode,
    step,
)
from navprune.bench import make_plan
from navprune.pruning import StrategySpec, schedule_budget
from navprune.worldgen import OracleConfig, SyntheticInstruction, build_world


def _filtered_world(world, keep_relevant_ids):
    """Clone the world keeping only the given relevant tokens (pre-pruned)."""
    tokens = tuple(
        t
        for t in world.instruction.tokens
        if not t.relevant or t.token_id in keep_relevant_ids
    )
    return dataclasses.replace(world, instruction=SyntheticInstruction(tokens))


def _clean_world(seed, **overrides):
    params = dict(
        n_nodes=24, path_len=5, hidden_dim=64, n_views=8, sigma_feat=0.0, filler_rate=0.5
    )
    params.update(overrides)
    return build_world(seed=seed, **params)


STACKS64 = EncoderStacks.build(64, seed=1)


def test_clean_episodes_follow_gt_path_100_worlds():
    plan = make_plan("none", 1.0, 6, None)
    for seed in range(100):
        world = _clean_world(seed)
        res = run_episode(world, plan, stacks=STACKS64, episode_seed=seed)
        assert res.success, f"seed {seed} failed"
        assert res.steps == len(world.house.gt_path)
        assert res.path == world.house.gt_path


def test_full_retention_prune_log_is_zero():
    from navprune.vocabulary import Vocabulary

    world = _clean_world(7)
    vocab = Vocabulary(frozenset({"the", "and"}))
    res = run_episode(world, make_plan("nap", 1.0, 6, vocab), stacks=STACKS64)
    # retain 1.0 with nap still installs hooks; nothing may be removed
    assert all(r == 0 for r in res.prune_log["instruction"])
    assert all(r == 0 for step_r in res.prune_log["views"] for r in step_r)


def test_zero_relevant_tokens_forces_stop_at_step_one():
    world = _filtered_world(_clean_world(3), set())
    res = run_episode(world, make_plan("none", 1.0, 6, None), stacks=STACKS64)
    assert res.steps == 1
    assert res.stop_node == world.house.start
    assert not res.success  # start != goal in generated worlds
    assert res.trace[0].split()[1] == "stop"


def test_k_btp_zero_removes_all_backtrack_options():
    world = _clean_world(11, sigma_feat=0.08, hidden_dim=12)
    plan = make_plan("btp", 1.0, 0, None)
    res = run_episode(world, plan, stacks=EncoderStacks.build(12, seed=1), episode_seed=2)
    assert all(u == 0 for u in res.unvisited_log)
    assert not any(" backtrack " in line for line in res.trace)


def test_judge_success_hop_tolerance():
    world = _clean_world(5)
    house = world.house
    goal = house.goal
    assert judge_success(house, goal, goal)
    neighbor = sorted(house.adjacency[goal])[0]
    assert not judge_success(house, neighbor, goal, success_hops=0)
    assert judge_success(house, neighbor, goal, success_hops=1)


def test_monotone_harm_of_relevant_token_loss():
    # removing more relevant tokens never converts a failure into a success;
    # checked exhaustively over all subsets of the 5 relevant tokens
    plan = make_plan("none", 1.0, 6, None)
    for seed in (0, 1, 2):
        world = _clean_world(seed)
        relevant_ids = [t.token_id for t in world.instruction.tokens if t.relevant]
        assert len(relevant_ids) == 5
        outcomes = {}
        for mask in range(2 ** len(relevant_ids)):
            keep = {tid for bit, tid in enumerate(relevant_ids) if mask >> bit & 1}
            res = run_episode(
                _filtered_world(world, keep), plan, stacks=STACKS64, episode_seed=seed
            )
            outcomes[frozenset(keep)] = res.success
        for small, ok_small in outcomes.items():
            if not ok_small:
                continue
            for big, ok_big in outcomes.items():
                if small <= big:
                    assert ok_big, f"seed {seed}: superset {set(big)} lost vs {set(small)}"


def test_budget_exactness_per_step():
    world = _clean_world(9, n_views=12)
    plan = make_plan("bgp", 0.5, 6, None)
    res = run_episode(world, plan, stacks=STACKS64, episode_seed=4)
    budget = schedule_budget(0.5, 2, 12)
    assert not res.prune_log["clamps"]
    for removals in res.prune_log["views"]:
        assert sum(removals) == budget.total


def test_budget_clamps_are_logged_and_subtracted():
    # aggressive full-panorama budget on a high-degree node clamps on
    # background count and the deficit shows up in the clamp log
    world = _clean_world(9, n_views=6, path_len=4)
    plan = make_plan("bgp", 0.3, 6, None)
    res = run_episode(world, plan, stacks=STACKS64, episode_seed=4)
    budget = schedule_budget(0.3, 2, 6)
    deficits = sum(k - k_eff for _, k, k_eff in res.prune_log["clamps"])
    removed = sum(sum(r) for r in res.prune_log["views"])
    assert removed == budget.total * len(res.prune_log["views"]) - deficits


def test_episode_determinism():
    world = _clean_world(13, sigma_feat=0.05, hidden_dim=16)
    stacks = EncoderStacks.build(16, seed=2)
    plan = make_plan("bgp+btp", 0.6, 6, None)
    kw = dict(stacks=stacks, episode_seed=21, importance="oracle",
              oracle=OracleConfig(p_flip=0.2, seed=0))
    a = run_episode(world, plan, **kw)
    b = run_episode(world, plan, **kw)
    assert a.path == b.path
    assert a.steps == b.steps
    assert a.trace == b.trace
    assert a.flops.total_flops == b.flops.total_flops


def test_attention_importance_mode_runs_and_scores_history():
    world = _clean_world(17, hidden_dim=16)
    stacks = EncoderStacks.build(16, seed=3)
    res = run_episode(
        world, make_plan("bgp+btp", 0.7, 4, None), stacks=stacks, importance="attention"
    )
    assert res.steps >= 1
    assert all(u <= 4 for u in res.unvisited_log)


class _FakeView:
    def __init__(self, vid, dest, feature):
        self.view_id = vid
        self.dest = dest
        self.feature = np.asarray(feature, dtype=float)
        self.kind = "action"


def test_step_ties_prefer_stop_then_navigate_then_lower_id():
    from navprune.agent import _cosine

    target = type("T", (), {"embedding": np.array([1.0, 0.0])})()
    view = _FakeView((0, 0), 1, [0.5, 0.8])
    c = _cosine(view.feature, target.embedding)

    # exact tie with theta_stop: stop wins
    topo = TopoMap(0, np.array([1.0, 0.0]))
    state = EpisodeState(current=0, pointer=0, step_index=1)
    choice = step(state, [target], [view], topo, PolicyParams(theta_stop=c), {(0, 0): 1.0})
    assert choice.kind == "stop"
    # and the unchosen action view was inserted as unvisited
    assert topo.unvisited_ids() == [1]

    # two identical views: the lower view id wins
    topo = TopoMap(0, np.array([1.0, 0.0]))
    state = EpisodeState(current=0, pointer=0, step_index=1)
    twin = _FakeView((0, 1), 2, [0.5, 0.8])
    choice = step(state, [target], [view, twin], topo, PolicyParams(), {})
    assert choice.kind == "navigate" and choice.target == (0, 0)

    # navigate ties a gamma=1 backtrack with the same feature: navigate wins
    topo = TopoMap(0, np.array([1.0, 0.0]))
    topo.insert_or_refresh(9, view.feature, 1.0, 0)
    topo.add_edge(0, 9)
    state = EpisodeState(current=0, pointer=0, step_index=1)
    choice = step(
        state, [target], [view], topo, PolicyParams(gamma=1.0, theta_stop=0.0), {}
    )
    assert choice.kind == "navigate"


def test_step_inserts_unchosen_action_views_with_scores():
    world = _clean_world(19)
    plan = make_plan("none", 1.0, 6, None)
    res = run_episode(world, plan, stacks=STACKS64, episode_seed=0)
    start_degree = len(world.house.adjacency[world.house.start])
    # after the first decision, all non-chosen neighbors of the start node
    # are unvisited entries (logged at the second step's decision point)
    if len(res.unvisited_log) > 1:
        assert res.unvisited_log[1] >= start_degree - 1


def test_sas_plan_keeps_token_count_and_costs_less():
    world = _clean_world(23)
    none_res = run_episode(world, make_plan("none", 1.0, 6, None), stacks=STACKS64)
    sas_res = run_episode(world, make_plan("sas", 1.0, 6, None), stacks=STACKS64)
    assert sas_res.path == none_res.path
    assert sas_res.prune_log["views"] == none_res.prune_log["views"]
    assert sas_res.flops.total_flops < none_res.flops.total_flops


def test_step_cap_failure_reports_t_max():
    world = _filtered_world(_clean_world(3), set())
    # force an artificial cap of 1 with a plan that cannot stop... the agent
    # stops immediately here, so instead cap a clean run below its need
    world2 = _clean_world(3)
    res = run_episode(world2, make_plan("none", 1.0, 6, None), stacks=STACKS64, t_max=3)
    assert not res.success
    assert res.steps == 3
