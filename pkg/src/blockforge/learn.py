"""Synchronous DQN: replay, adaptive exploration, TD targets, curricula,
and the losses for a learned transition model."""
from __future__ import annotations

import csv
import math
import pickle
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import actions as A
from . import neural
from .agents import GreedyQPolicy, flat_to_action, masked_argmax
from .env import Env, EnvConfig, TerminationReason, total_obstacle_length
from .obsgraph import ObsGraph
from .physics import Kind, Scene
from .rng import derive_seed, substream
from .scenegen import MAX_LEVEL, GeneratedScene, TaskId, generate, training_scene


# ---------------------------------------------------------------------------
# exploration


def eps_probability(n: int, l_hat: float, eps: float, variant: str = "min") -> float:
    """Probability of a random action at step ``n`` of an episode.

    ``variant="min"`` is eps / min(l_hat - n, 1), clamped to [eps, 1] and 1
    once the expected length is reached. ``"max"`` uses max in place of min.
    """
    left = l_hat - n
    if left <= 0:
        return 1.0
    denom = min(left, 1.0) if variant == "min" else max(left, 1.0)
    return float(min(1.0, max(eps, eps / denom)))


@dataclass
class EpsSchedule:
    eps: float = 0.3
    l_hat: float = 10.0
    decay: float = 0.99
    variant: str = "min"

    def p(self, n: int) -> float:
        return eps_probability(n, self.l_hat, self.eps, self.variant)

    def update(self, length: int) -> None:
        self.l_hat = self.decay * self.l_hat + (1 - self.decay) * length


# ---------------------------------------------------------------------------
# replay


@dataclass
class Transition:
    graph: ObsGraph
    edge: int  # row in graph's edge list
    col: int  # 2 * offset + sticky bit
    reward: float
    next_graph: ObsGraph | None  # None when terminal
    terminal: bool


class Replay:
    """FIFO store with counters for the replay ratio."""

    def __init__(self, capacity: int = 100_000):
        self.items: deque[Transition] = deque(maxlen=capacity)
        self.produced = 0
        self.consumed = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, t: Transition) -> None:
        self.items.append(t)
        self.produced += 1

    def sample(self, rng: np.random.Generator, batch: int) -> list[Transition]:
        idx = rng.integers(len(self.items), size=batch)
        self.consumed += batch
        return [self.items[int(i)] for i in idx]

    @property
    def ratio(self) -> float:
        return self.consumed / max(self.produced, 1)


# ---------------------------------------------------------------------------
# targets and loss


def td_target(reward: float, terminal: bool, q_next: np.ndarray | None, valid: np.ndarray | None,
              gamma: float) -> float:
    """reward + gamma * max over valid next actions (0 past a terminal)."""
    if terminal or q_next is None:
        return float(reward)
    q = np.asarray(q_next, dtype=float).reshape(-1)
    if valid is not None:
        mask = np.asarray(valid, dtype=bool).reshape(-1)
        if not mask.any():
            return float(reward)
        q = q[mask]
    if q.size == 0:
        return float(reward)
    return float(reward + gamma * q.max())


def huber(x: np.ndarray, delta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise loss and derivative."""
    a = np.abs(x)
    loss = np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))
    return loss, np.clip(x, -delta, delta)


def batch_targets(target_params, cfg: neural.GNConfig, batch: Sequence[Transition], gamma: float) -> np.ndarray:
    y = np.array([t.reward for t in batch], dtype=float)
    live = [k for k, t in enumerate(batch)
            if not t.terminal and t.next_graph is not None and len(t.next_graph.action_edge_index)]
    if live:
        graphs = [batch[k].next_graph for k in live]
        gb = neural.GraphBatch.from_graphs(graphs, cfg.normalize)
        rows = np.concatenate([g.action_edge_index + off for g, off in zip(graphs, gb.edge_offset)])
        q, _ = neural.forward(target_params, cfg, gb, rows)
        owner = gb.edge_gid[rows]
        best = np.full(len(graphs), -np.inf)
        np.maximum.at(best, owner, q.max(axis=1))
        y[live] += gamma * best
    return y


def q_loss_and_grads(params, cfg: neural.GNConfig, batch: Sequence[Transition], y: np.ndarray,
                     delta: float = 1.0):
    graphs = [t.graph for t in batch]
    gb = neural.GraphBatch.from_graphs(graphs, cfg.normalize)
    rows = np.array([t.edge for t in batch]) + gb.edge_offset
    q, cache = neural.forward(params, cfg, gb, rows)
    cols = np.array([t.col for t in batch])
    pred = q[np.arange(len(batch)), cols]
    loss, d = huber(pred - y, delta)
    dq = np.zeros_like(q)
    dq[np.arange(len(batch)), cols] = d / len(batch)
    return float(loss.mean()), neural.backward(params, cache, dq)


# ---------------------------------------------------------------------------
# curricula


def linear_progress(steps: int, schedule: float = 4e4) -> float:
    return float(min(1.0, steps / schedule))


DYNAMIC_THRESHOLDS = {
    TaskId.SILHOUETTE: (0.5, 0.5),
    TaskId.CONNECTING: (0.25, 0.25),
    TaskId.COVERING: (0.25, 0.25),
    TaskId.COVERING_HARD: (0.5, 0.5),
}


def max_reward(task: TaskId, scene: Scene) -> float:
    if task is TaskId.SILHOUETTE:
        return float(len(scene.of_kind(Kind.TARGET_BLOCK)))
    if task is TaskId.CONNECTING:
        return float(len(scene.of_kind(Kind.TARGET_POINT)))
    return total_obstacle_length(scene)


@dataclass
class DynamicCurriculum:
    """Advance one level once every unlocked level's recent episodes pass.

    An episode passes when its return reaches ``reward_frac`` of the scene's
    maximum; a level passes when ``episode_frac`` of its last ``window``
    episodes pass.
    """

    task: TaskId
    level: int = 1
    window: int = 200
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task = TaskId(self.task)

    @property
    def thresholds(self) -> tuple[float, float]:
        return DYNAMIC_THRESHOLDS[self.task]

    def record(self, level: int, ret: float, best: float) -> None:
        reward_frac, _ = self.thresholds
        ok = best > 0 and ret >= reward_frac * best
        self.stats.setdefault(level, deque(maxlen=self.window)).append(bool(ok))

    def ready(self) -> bool:
        _, episode_frac = self.thresholds
        for lvl in range(1, self.level + 1):
            hist = self.stats.get(lvl)
            if not hist or len(hist) < self.window or np.mean(hist) < episode_frac:
                return False
        return True

    def tick(self) -> float:
        if self.level < MAX_LEVEL[self.task] and self.ready():
            self.level += 1
        return self.level / MAX_LEVEL[self.task]


# ---------------------------------------------------------------------------
# learned-model losses


GAMMA_CLAMP = 1e-6


def _bernoulli_kl(p: float, q: float) -> float:
    p = min(max(p, GAMMA_CLAMP), 1 - GAMMA_CLAMP)
    q = min(max(q, GAMMA_CLAMP), 1 - GAMMA_CLAMP)
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


def model_single_step_loss(pred: tuple, true: tuple) -> float:
    """||o - o'|| + |r - r'| + KL of the discount Bernoullis."""
    o, r, g = pred
    o2, r2, g2 = true
    diff = np.asarray(o, dtype=float) - np.asarray(o2, dtype=float)
    return float(np.linalg.norm(diff.reshape(-1)) + abs(r - r2) + _bernoulli_kl(g, g2))


def model_unrolled_loss(model: Callable, observations: Sequence, actions: Sequence, rewards: Sequence,
                        discounts: Sequence, n_unroll: int) -> float:
    """Sum of single-step losses along the model's own predicted observations.

    ``model(o, a) -> (o_next, r, gamma)``; step k compares the prediction
    from the k-times-predicted observation against the true step-k outcome.
    """
    if len(observations) < n_unroll + 1:
        raise ValueError("window shorter than n_unroll + 1")
    total, o = 0.0, observations[0]
    for k in range(n_unroll):
        o_pred, r_pred, g_pred = model(o, actions[k])
        total += model_single_step_loss((o_pred, r_pred, g_pred),
                                        (observations[k + 1], rewards[k], discounts[k]))
        o = o_pred
    return total


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    task: str = "silhouette"
    seed: int = 0
    learner_steps: int = 40_000
    n_rec: int = 3
    n_offsets: int = 15
    latent: int = 16
    hidden: int = 64
    gamma: float = 0.98
    lr: float = 1e-4
    batch: int = 16
    replay_capacity: int = 100_000
    replay_ratio: int = 4
    min_replay: int = 200
    target_every: int = 500
    huber_delta: float = 1.0
    eps: float = 0.3
    eps_variant: str = "min"
    l_hat_init: float = 10.0
    l_hat_decay: float = 0.99
    curriculum: str = "linear"  # linear | dynamic | fixed
    curriculum_steps: float = 4e4
    level: int = 1  # used by the fixed curriculum
    connectivity: str = "full"
    max_steps: int = 40
    budget_train: int = 0
    eval_every: int = 500
    eval_episodes: int = 50
    eval_seed: int = 10_000

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def gn(self) -> neural.GNConfig:
        return neural.GNConfig(latent=self.latent, hidden=self.hidden, n_rec=self.n_rec, n_offsets=self.n_offsets)

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(max_steps=self.max_steps, n_offsets=self.n_offsets, connectivity=self.connectivity)


@dataclass
class EvalResult:
    mean_return: float
    completed_rate: float
    reasons: dict


def evaluate(policy, scenes: Sequence[GeneratedScene], env_cfg: EnvConfig, seed: int = 0) -> EvalResult:
    rets, done, reasons = [], 0, {}
    for k, gen in enumerate(scenes):
        env = Env.from_generated(gen, env_cfg)
        rng = substream(seed, "eval", k)
        total = 0.0
        while not env.done:
            total += env.step(policy.act(env, rng)).reward
        rets.append(total)
        r = env.state.terminated.value
        reasons[r] = reasons.get(r, 0) + 1
        done += env.state.terminated is TerminationReason.COMPLETED
    return EvalResult(float(np.mean(rets)), done / max(len(scenes), 1), reasons)


METRIC_FIELDS = ("step", "mean_return_all", "mean_return_hardest", "loss", "eps", "level", "completed_hardest")


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.task = TaskId(cfg.task)
        self.gn = cfg.gn
        self.env_cfg = cfg.env
        self.params = neural.init_params(self.gn, derive_seed(cfg.seed, "init"))
        self.target = {k: v.copy() for k, v in self.params.items()}
        self.adam = neural.Adam(lr=cfg.lr)
        self.replay = Replay(cfg.replay_capacity)
        self.eps = EpsSchedule(cfg.eps, cfg.l_hat_init, cfg.l_hat_decay, cfg.eps_variant)
        self.rng = substream(cfg.seed, "train")
        self.dynamic = DynamicCurriculum(self.task) if cfg.curriculum == "dynamic" else None
        self.steps = 0
        self.episodes = 0
        self.env: Env | None = None
        self.ep_step = 0
        self.ep_return = 0.0
        self.metrics: list[dict] = []
        self.losses: deque[float] = deque(maxlen=100)

    # -- curriculum -------------------------------------------------------
    def progress(self) -> float:
        if self.cfg.curriculum == "linear":
            return linear_progress(self.steps, self.cfg.curriculum_steps)
        if self.cfg.curriculum == "dynamic":
            return self.dynamic.level / MAX_LEVEL[self.task]
        return self.cfg.level / MAX_LEVEL[self.task]

    def current_level(self) -> int:
        if self.cfg.curriculum == "fixed":
            return self.cfg.level
        return max(1, min(MAX_LEVEL[self.task], math.ceil(self.progress() * MAX_LEVEL[self.task])))

    def _new_episode(self) -> None:
        idx = self.episodes
        if self.cfg.curriculum == "fixed":
            gen = generate(self.task, self.cfg.level, self.cfg.seed, idx)
        else:
            gen = training_scene(self.task, self.progress(), self.cfg.seed, idx)
        self.env = Env.from_generated(gen, self.env_cfg)
        self.ep_step = 0
        self.ep_return = 0.0

    # -- acting -----------------------------------------------------------
    def choose(self, env: Env) -> tuple[A.Action, int, int]:
        g = env.observe()
        n_ae = len(g.action_edge_index)
        if n_ae == 0:
            return A.Resign(), -1, -1
        if self.rng.random() < self.eps.p(self.ep_step):
            flat = int(self.rng.integers(n_ae * 2 * self.gn.n_offsets))
        elif self.cfg.budget_train > 0:
            from .plan import MCTSConfig, plan_action
            action = plan_action(env, self.params, self.gn, MCTSConfig(budget=self.cfg.budget_train),
                                 seed=derive_seed(self.cfg.seed, "search", self.steps, self.ep_step))
            if isinstance(action, A.Resign):
                return action, -1, -1
            from .agents import action_to_flat
            flat = action_to_flat(g, action, self.gn.n_offsets)
        else:
            flat = masked_argmax(neural.q_values(self.params, self.gn, g))
        e, col = divmod(flat, 2 * self.gn.n_offsets)
        return flat_to_action(g, flat, self.gn.n_offsets), int(g.action_edge_index[e]), col

    def actor_step(self) -> None:
        if self.env is None or self.env.done:
            self._new_episode()
        env = self.env
        g = env.observe()
        action, edge, col = self.choose(env)
        res = env.step(action)
        self.ep_step += 1
        self.ep_return += res.reward
        if edge >= 0:
            nxt = None if res.done else env.observe()
            self.replay.add(Transition(g, edge, col, res.reward, nxt, res.done))
        if res.done:
            self.episodes += 1
            self.eps.update(self.ep_step)
            if self.dynamic is not None:
                self.dynamic.record(env.meta.get("level", 1), self.ep_return, max_reward(self.task, env.initial_scene))
                self.dynamic.tick()

    # -- learning ---------------------------------------------------------
    def learner_step(self) -> float:
        batch = self.replay.sample(self.rng, self.cfg.batch)
        y = batch_targets(self.target, self.gn, batch, self.cfg.gamma)
        loss, grads = q_loss_and_grads(self.params, self.gn, batch, y, self.cfg.huber_delta)
        self.adam.step(self.params, grads)
        self.steps += 1
        if self.steps % self.cfg.target_every == 0:
            self.target = {k: v.copy() for k, v in self.params.items()}
        self.losses.append(loss)
        return loss

    def eval_scenes(self, hardest: bool, n: int | None = None) -> list[GeneratedScene]:
        n = self.cfg.eval_episodes if n is None else n
        top = self.current_level()
        out = []
        for k in range(n):
            if hardest or self.cfg.curriculum == "fixed":
                level = top
            else:
                level = int(substream(self.cfg.eval_seed, "eval-level", k).integers(1, top + 1))
            out.append(generate(self.task, level, self.cfg.eval_seed, k))
        return out

    def evaluate(self, n: int | None = None) -> dict:
        pol = GreedyQPolicy(self.params, self.gn)
        hard = evaluate(pol, self.eval_scenes(True, n), self.env_cfg, self.cfg.eval_seed)
        if self.cfg.curriculum == "fixed":
            every = hard
        else:
            every = evaluate(pol, self.eval_scenes(False, n), self.env_cfg, self.cfg.eval_seed)
        row = {
            "step": self.steps,
            "mean_return_all": every.mean_return,
            "mean_return_hardest": hard.mean_return,
            "loss": float(np.mean(self.losses)) if self.losses else float("nan"),
            "eps": self.eps.p(0),
            "level": self.current_level(),
            "completed_hardest": hard.completed_rate,
        }
        self.metrics.append(row)
        return row

    def run(self, until: int | None = None, callback: Callable[[dict], None] | None = None) -> list[dict]:
        """Train until ``until`` learner steps (default: the configured total)."""
        until = self.cfg.learner_steps if until is None else until
        per_learn = max(1, self.cfg.batch // self.cfg.replay_ratio)
        while len(self.replay) < self.cfg.min_replay:
            self.actor_step()
        while self.steps < until:
            for _ in range(per_learn):
                self.actor_step()
            self.learner_step()
            if self.cfg.eval_every and self.steps % self.cfg.eval_every == 0:
                row = self.evaluate()
                if callback is not None:
                    callback(row)
        return self.metrics

    # -- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        neural.save_params(self.params, path, self.gn)
        with open(path.with_suffix(".state.pkl"), "wb") as f:
            pickle.dump({k: v for k, v in self.__dict__.items()}, f)

    @classmethod
    def resume(cls, path: str | Path) -> "Trainer":
        with open(Path(path).with_suffix(".state.pkl"), "rb") as f:
            state = pickle.load(f)
        out = cls.__new__(cls)
        out.__dict__.update(state)
        return out

    def write_metrics(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
            w.writeheader()
            for row in self.metrics:
                w.writerow(row)


def smoothed(values: Sequence[float], window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
