import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockforge import neural
from blockforge.learn import (
    DYNAMIC_THRESHOLDS,
    DynamicCurriculum,
    EpsSchedule,
    Replay,
    TrainConfig,
    Trainer,
    Transition,
    batch_targets,
    eps_probability,
    huber,
    linear_progress,
    model_single_step_loss,
    model_unrolled_loss,
    q_loss_and_grads,
    smoothed,
    td_target,
)
from blockforge.obsgraph import build_graph
from blockforge.scenegen import TaskId, generate

SMALL = dict(task="silhouette", curriculum="fixed", level=1, min_replay=40, eval_every=0,
             latent=8, hidden=16, n_rec=1)


# -- exploration ------------------------------------------------------------------------


def test_eps_examples():
    assert eps_probability(0, 10, 0.3) == pytest.approx(0.3)
    assert eps_probability(9, 9.5, 0.3) == pytest.approx(0.6)
    assert eps_probability(12, 9.5, 0.3) == 1.0


@given(st.integers(0, 100), st.floats(0, 100), st.floats(0.01, 1), st.sampled_from(["min", "max"]))
def test_eps_is_clamped(n, l_hat, eps, variant):
    p = eps_probability(n, l_hat, eps, variant)
    assert eps <= p <= 1.0


def test_eps_max_variant_never_exceeds_base_before_the_end():
    assert eps_probability(0, 10, 0.3, "max") == pytest.approx(0.3)
    assert eps_probability(9, 9.5, 0.3, "max") == pytest.approx(0.3)


def test_length_estimate_moves_toward_observed_lengths():
    sched = EpsSchedule(l_hat=10.0, decay=0.5)
    sched.update(2)
    assert sched.l_hat == 6.0


# -- targets ------------------------------------------------------------------------------


def test_td_target_terminal_and_zero_discount():
    assert td_target(1.0, True, np.array([5.0]), None, 0.98) == 1.0
    assert td_target(0.5, False, np.array([5.0, 2.0]), None, 0.0) == 0.5


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.data())
def test_td_target_matches_brute_force_max(values, data):
    valid = data.draw(st.lists(st.booleans(), min_size=len(values), max_size=len(values)))
    y = td_target(0.25, False, np.array(values), np.array(valid), 0.9)
    best = None
    for v, ok in zip(values, valid):
        if ok and (best is None or v > best):
            best = v
    assert y == (0.25 if best is None else 0.25 + 0.9 * best)


def test_td_target_ignores_poisoned_invalid_entries():
    q = np.array([0.1, 0.3, 0.2])
    valid = np.array([True, False, True])
    clean = td_target(0.0, False, q, valid, 0.98)
    q[1] = 1e9
    assert td_target(0.0, False, q, valid, 0.98) == clean


def test_batch_targets_only_look_at_action_edges():
    cfg = neural.GNConfig(latent=8, hidden=16)
    p = neural.init_params(cfg, 0)
    g = build_graph(generate("silhouette", 2, 0, 0).scene)
    nxt = build_graph(generate("silhouette", 2, 0, 1).scene)
    t = Transition(g, int(g.action_edge_index[0]), 0, 1.0, nxt, False)
    y = batch_targets(p, cfg, [t], 0.9)[0]
    assert y == pytest.approx(1.0 + 0.9 * neural.q_values(p, cfg, nxt).max())
    # poisoning the output head for non-action edges would not matter: they are never decoded
    terminal = Transition(g, int(g.action_edge_index[0]), 0, 1.0, None, True)
    assert batch_targets(p, cfg, [terminal], 0.9)[0] == 1.0


def test_huber_pieces():
    loss, grad = huber(np.array([0.5, -3.0]), 1.0)
    assert np.allclose(loss, [0.125, 2.5]) and np.allclose(grad, [0.5, -1.0])


def test_perfect_q_gives_zero_loss_and_no_update():
    cfg = neural.GNConfig(latent=8, hidden=16)
    p = neural.init_params(cfg, 1)
    g = build_graph(generate("silhouette", 1, 0, 0).scene)
    e = int(g.action_edge_index[2])
    q = neural.q_values(p, cfg, g)
    t = Transition(g, e, 3, 0.0, None, True)
    loss, grads = q_loss_and_grads(p, cfg, [t], np.array([q[2, 3]]))
    assert loss == 0.0
    before = {k: v.copy() for k, v in p.items()}
    neural.Adam().step(p, grads)
    assert all(np.array_equal(before[k], p[k]) for k in p)


def test_overfits_frozen_buffer():
    cfg = TrainConfig(**SMALL, lr=1e-3, seed=3)
    tr = Trainer(cfg)
    while len(tr.replay) < 50:
        tr.actor_step()
    frozen = list(tr.replay.items)[:50]
    rng = np.random.default_rng(0)
    adam = neural.Adam(lr=1e-3)
    y = batch_targets(tr.target, tr.gn, frozen, cfg.gamma)
    first, _ = q_loss_and_grads(tr.params, tr.gn, frozen, y)
    for _ in range(100):
        idx = rng.integers(50, size=16)
        batch = [frozen[i] for i in idx]
        _, grads = q_loss_and_grads(tr.params, tr.gn, batch, y[idx])
        adam.step(tr.params, grads)
    last, _ = q_loss_and_grads(tr.params, tr.gn, frozen, y)
    assert last < first


# -- replay -----------------------------------------------------------------------------


def test_replay_is_fifo_with_capacity():
    r = Replay(3)
    for k in range(5):
        r.add(Transition(None, k, 0, 0.0, None, True))
    assert [t.edge for t in r.items] == [2, 3, 4] and r.produced == 5


def test_training_keeps_replay_ratio():
    tr = Trainer(TrainConfig(**SMALL))
    tr.run(until=30)
    assert tr.replay.consumed == 30 * 16
    assert tr.replay.ratio <= 4.0


# -- curricula ----------------------------------------------------------------------------


def test_linear_progress():
    assert linear_progress(20_000) == 0.5
    assert linear_progress(10**6) == 1.0


def test_dynamic_thresholds_per_task():
    assert DYNAMIC_THRESHOLDS[TaskId.SILHOUETTE] == (0.5, 0.5)
    assert DYNAMIC_THRESHOLDS[TaskId.CONNECTING] == (0.25, 0.25)


def test_dynamic_advances_when_all_levels_pass():
    cur = DynamicCurriculum("silhouette", window=10)
    for _ in range(10):
        cur.record(1, 1.0, 1.0)
    cur.tick()
    assert cur.level == 2
    for _ in range(10):
        cur.record(2, 2.0, 2.0)
    cur.tick()
    assert cur.level == 3


def test_dynamic_holds_when_a_level_fails():
    cur = DynamicCurriculum("silhouette", level=2, window=10)
    for _ in range(10):
        cur.record(1, 0.0, 1.0)
        cur.record(2, 2.0, 2.0)
    cur.tick()
    assert cur.level == 2


def test_dynamic_needs_a_full_window():
    cur = DynamicCurriculum("covering", window=10)
    for _ in range(9):
        cur.record(1, 5.0, 5.0)
    cur.tick()
    assert cur.level == 1


# -- learned-model losses -------------------------------------------------------------------


def test_single_step_examples():
    o = np.arange(6.0)
    assert model_single_step_loss((o, 1.0, 0.98), (o, 1.0, 0.98)) == 0.0
    assert model_single_step_loss((o, 2.0, 0.98), (o, 1.0, 0.98)) == pytest.approx(1.0)
    assert model_single_step_loss((o, 0.0, 0.5), (o, 0.0, 0.5)) == 0.0
    assert model_single_step_loss((o, 0.0, 0.0), (o, 0.0, 1.0)) > 0


def _linear_model(mat):
    return lambda o, a: (mat @ o + a, float(o.sum()), 0.9)


def test_unrolled_two_steps_equals_manual_composition():
    rng = np.random.default_rng(0)
    mat = rng.standard_normal((3, 3)) * 0.5
    model = _linear_model(mat)
    obs = [rng.standard_normal(3) for _ in range(3)]
    acts = [rng.standard_normal(3) for _ in range(2)]
    rews, discs = [0.3, -0.2], [0.9, 0.5]
    o1, r1, g1 = model(obs[0], acts[0])
    o2, r2, g2 = model(o1, acts[1])
    manual = (model_single_step_loss((o1, r1, g1), (obs[1], rews[0], discs[0]))
              + model_single_step_loss((o2, r2, g2), (obs[2], rews[1], discs[1])))
    assert model_unrolled_loss(model, obs, acts, rews, discs, 2) == pytest.approx(manual, abs=1e-12)


def test_unrolled_rejects_short_window():
    with pytest.raises(ValueError):
        model_unrolled_loss(_linear_model(np.eye(2)), [np.zeros(2)], [], [], [], 1)


# -- loop ---------------------------------------------------------------------------------------


def test_training_is_deterministic():
    def losses():
        tr = Trainer(TrainConfig(**SMALL, seed=5))
        out = []
        tr.run(until=15, callback=None)
        out = list(tr.losses)
        return out, tr.params

    (la, pa), (lb, pb) = losses(), losses()
    assert la == lb
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_resume_continues_bit_exactly(tmp_path):
    straight = Trainer(TrainConfig(**SMALL, seed=2))
    straight.run(until=20)
    first = Trainer(TrainConfig(**SMALL, seed=2))
    first.run(until=10)
    first.save(tmp_path / "ck")
    resumed = Trainer.resume(tmp_path / "ck")
    resumed.run(until=20)
    assert all(np.array_equal(straight.params[k], resumed.params[k]) for k in straight.params)


def test_metrics_rows_and_csv(tmp_path):
    tr = Trainer(TrainConfig(**{**SMALL, "eval_every": 5, "eval_episodes": 3}))
    rows = tr.run(until=10)
    assert [r["step"] for r in rows] == [5, 10]
    tr.write_metrics(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == "step,mean_return_all,mean_return_hardest,loss,eps,level,completed_hardest"


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"task": "silhouette", "learning_rate": 1})
    assert TrainConfig.from_dict({"n_rec": 1}).gn.n_rec == 1


def test_smoothing_is_trailing_mean():
    assert np.allclose(smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])
    assert math.isclose(smoothed([5.0])[0], 5.0)
