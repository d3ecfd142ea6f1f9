import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockforge import actions as A
from blockforge import neural
from blockforge.agents import GreedyQPolicy
from blockforge.env import Env
from blockforge.physics import Kind, Rect
from blockforge.plan import (
    MCTSConfig,
    PerfectModel,
    Search,
    SearchNode,
    node_value,
    plan_action,
    select_action,
    uct_select,
)
from blockforge.rng import substream
from blockforge.scenegen import TaskId, base_scene, generate

GN = neural.GNConfig(latent=8, hidden=16, n_rec=1)
PARAMS = neural.init_params(GN, 0)


def node(q_prior, counts, returns, group=None) -> SearchNode:
    n = len(counts)
    nd = SearchNode(())
    nd.actions = list(range(n))
    nd.flat = np.arange(n)
    nd.group = np.arange(n) if group is None else np.asarray(group)
    nd.q_prior = None if q_prior is None else np.asarray(q_prior, dtype=float)
    nd.counts = np.asarray(counts, dtype=float)
    nd.returns = np.asarray(returns, dtype=float)
    return nd


def single_target_env() -> Env:
    scene = base_scene()
    scene.add(Rect(0.0, 0.35, 0.7, 0.7), Kind.TARGET_BLOCK)
    return Env(TaskId.SILHOUETTE, scene)


# -- node values ------------------------------------------------------------------------


def test_node_value_prior_only():
    assert node_value(node([0.2, 0.8], [1, 1], [0, 0])) == pytest.approx(0.4)


def test_node_value_after_one_rollout():
    assert node_value(node([0.2, 0.8], [1, 2], [0, 1.0])) == pytest.approx(0.6)


def test_node_value_raw_mode_drops_prior():
    assert node_value(node(None, [1, 2], [0, 1.0])) == pytest.approx(1.0 / 3)


def test_node_value_requires_expansion():
    with pytest.raises(ValueError):
        node_value(SearchNode(()))


# -- selection ---------------------------------------------------------------------------


@given(st.integers(1, 12), st.integers(0, 10**6), st.floats(0, 4))
def test_grouped_selection_reduces_to_uct_with_singleton_groups(n, seed, c):
    rng = np.random.default_rng(seed)
    nd = node(rng.standard_normal(n), 1 + rng.integers(0, 5, n), rng.standard_normal(n))
    assert select_action(nd, c) == uct_select(nd, c)


def test_single_edge_is_plain_uct_over_offsets():
    rng = np.random.default_rng(1)
    for _ in range(50):
        nd = node(rng.standard_normal(6), 1 + rng.integers(0, 5, 6), rng.standard_normal(6), group=[0] * 6)
        assert select_action(nd, 2.0) == uct_select(nd, 2.0)


def test_least_visited_group_wins_on_equal_values():
    nd = node([0.5] * 4, [3, 3, 1, 1], [1.0, 1.0, 0.0, 0.0], group=[0, 0, 1, 1])
    assert np.allclose(nd.action_values(), 0.5)
    assert select_action(nd, 2.0) in (2, 3)


def test_zero_c_is_pure_exploitation():
    nd = node([0.1, 0.9, 0.3], [5, 1, 2], [0, 0, 0], group=[0, 1, 1])
    assert select_action(nd, 0.0) == 1


# -- search ---------------------------------------------------------------------------------


def test_visit_conservation():
    env = Env.from_generated(generate("connecting", 1, 0, 0))
    search = Search(env, PARAMS, GN, MCTSConfig(budget=25), substream(0, "t"))
    k = len(search.root.actions)
    search.run(25)
    assert search.root.visits == k + 25


def test_search_is_pure():
    env = Env.from_generated(generate("silhouette", 2, 0, 3))
    cfg = MCTSConfig(budget=15)
    a = plan_action(env, PARAMS, GN, cfg, seed=7)
    b = plan_action(env, PARAMS, GN, cfg, seed=7)
    assert a == b
    assert env.state.step == 0  # the live episode is untouched


@pytest.mark.parametrize("task", list(TaskId))
def test_budget_zero_equals_greedy(task):
    greedy = GreedyQPolicy(PARAMS, GN)
    for k in range(10):
        env = Env.from_generated(generate(task, 1, 1, k))
        assert plan_action(env, PARAMS, GN, MCTSConfig(budget=0)) == greedy.act(env)


def test_one_step_oracle_picks_a_rewarding_action():
    env = single_target_env()
    g = env.observe()
    n = env.cfg.n_offsets
    total = len(g.action_edge_index) * 2 * n
    # exhaustive enumeration of one-step rewards
    best = set()
    from blockforge.agents import flat_to_action
    for f in range(total):
        trial = env.clone()
        if trial.step(flat_to_action(g, f, n)).reward == 1.0:
            best.add(flat_to_action(g, f, n))
    assert best
    cfg = MCTSConfig(budget=total, use_prior=False, full_expansion=True, max_rollout_depth=0)
    choice = plan_action(env, None, None, cfg, seed=0)
    assert choice in best


def test_perfect_model_replays_sequences():
    env = Env.from_generated(generate("covering", 1, 0, 0))
    model = PerfectModel(env)
    g = env.observe()
    from blockforge.agents import flat_to_action
    a0 = flat_to_action(g, 14)
    _, r1, _, _ = model.apply((), a0)
    _, r2, _, _ = model.apply((), a0)
    live = env.clone()
    assert r1 == r2 == live.step(a0).reward
    assert model.env_at((a0,)).state.scene.content_hash() == live.state.scene.content_hash()


def test_trace_lines():
    env = Env.from_generated(generate("connecting", 1, 0, 1))
    buf = io.StringIO()
    plan_action(env, PARAMS, GN, MCTSConfig(budget=5), seed=1, trace=buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["iteration"] for r in rows] == list(range(5))
    assert all({"path", "leaf_value", "backup"} <= set(r) for r in rows)


def test_prior_search_needs_params():
    with pytest.raises(ValueError):
        Search(single_target_env(), None, GN, MCTSConfig(budget=1), substream(0))


def test_no_actions_resigns():
    scene = base_scene()
    for b in list(scene.available):
        scene.remove(b.id)
    env = Env(TaskId.COVERING, scene)
    assert isinstance(plan_action(env, PARAMS, GN, MCTSConfig(budget=3)), A.Resign)
