"""Monte Carlo tree search over action sequences.

Nodes are identified by the action sequence that leads to them from the
root. Transitions come from a model; the default one replays the sequence in
a private copy of the episode, so search is a pure function of its inputs.
Each node keeps a prior (the Q-network's value of every expanded action, or
nothing for raw search) and per-action visit counts and summed returns.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Protocol

import numpy as np

from . import actions as A
from . import neural
from .agents import flat_to_action, masked_argmax
from .env import Env
from .obsgraph import ObsGraph
from .rng import substream


@dataclass
class MCTSConfig:
    budget: int = 0
    c: float = 2.0
    top_k: int = 16
    full_expansion: bool = False
    rollout_eps: float = 0.1
    use_prior: bool = True  # False gives raw search with random rollouts
    max_rollout_depth: int | None = None


# ---------------------------------------------------------------------------
# transition models


class TransitionModel(Protocol):
    def apply(self, key: tuple, action: A.Action) -> tuple[ObsGraph | None, float, float, bool]: ...

    def env_at(self, key: tuple) -> Env: ...


class PerfectModel:
    """Replays action sequences from a private copy of the root episode."""

    def __init__(self, root: Env):
        base = root.clone()
        base.log = []
        self._cache: dict[tuple, tuple[Env, float]] = {(): (base, 0.0)}

    def env_at(self, key: tuple) -> Env:
        return self._entry(key)[0]

    def _entry(self, key: tuple) -> tuple[Env, float]:
        hit = self._cache.get(key)
        if hit is None:
            env = self._entry(key[:-1])[0].clone()
            reward = env.step(key[-1]).reward
            hit = self._cache[key] = (env, reward)
        return hit

    def apply(self, key: tuple, action: A.Action):
        env, reward = self._entry(key + (action,))
        done = env.done
        return (None if done else env.observe()), reward, (0.0 if done else 1.0), done


# ---------------------------------------------------------------------------
# tree


@dataclass
class SearchNode:
    key: tuple
    terminal: bool = False
    reward: float = 0.0  # reward of the transition into this node
    actions: list = field(default_factory=list)  # expanded actions, in flat-index order
    flat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    group: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))  # edge of each action
    q_prior: np.ndarray | None = None
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    children: dict = field(default_factory=dict)

    @property
    def expanded(self) -> bool:
        return len(self.actions) > 0

    @property
    def visits(self) -> float:
        return float(self.counts.sum())

    def action_values(self) -> np.ndarray:
        """Per-action estimate: (prior + summed returns) / N(s, a)."""
        prior = self.q_prior if self.q_prior is not None else 0.0
        return (prior + self.returns) / self.counts


def node_value(node: SearchNode) -> float:
    """(max prior Q + all returns through the node) / N(s); prior dropped in raw mode."""
    if not node.expanded:
        raise ValueError("node not expanded")
    prior = float(node.q_prior.max()) if node.q_prior is not None else 0.0
    return (prior + float(node.returns.sum())) / node.visits


def _argmax_first(x: np.ndarray) -> int:
    return int(np.flatnonzero(x == x.max())[0])


def select_action(node: SearchNode, c: float) -> int:
    """Two-stage UCT: pick an edge group, then an offset within it.

    Returns the position of the chosen action in ``node.actions``.
    """
    values = node.action_values()
    log_n = math.log(node.visits)
    groups = np.unique(node.group)
    scores = np.empty(len(groups))
    for k, g in enumerate(groups):
        members = node.group == g
        scores[k] = values[members].max() + c * math.sqrt(log_n / node.counts[members].sum())
    best_group = groups[_argmax_first(scores)]
    idx = np.flatnonzero(node.group == best_group)
    inner = values[idx] + c * np.sqrt(log_n / node.counts[idx])
    return int(idx[_argmax_first(inner)])


def uct_select(node: SearchNode, c: float) -> int:
    """Plain per-action UCT (reference for the grouped rule)."""
    score = node.action_values() + c * np.sqrt(math.log(node.visits) / node.counts)
    return _argmax_first(score)


# ---------------------------------------------------------------------------
# search


def _edge_q(params, gn: neural.GNConfig | None, graph: ObsGraph) -> np.ndarray | None:
    if params is None:
        return None
    return neural.q_values(params, gn, graph)


class Search:
    def __init__(self, root_env: Env, params, gn: neural.GNConfig | None, cfg: MCTSConfig,
                 rng: np.random.Generator, model: TransitionModel | None = None, trace: IO | None = None):
        if cfg.use_prior and params is None:
            raise ValueError("prior-guided search needs Q-network parameters")
        self.params = params if cfg.use_prior else None
        self.gn = gn
        self.n = gn.n_offsets if gn is not None else root_env.cfg.n_offsets
        self.cfg = cfg
        self.rng = rng
        self.model = model or PerfectModel(root_env)
        self.trace = trace
        self.root = SearchNode(())
        self.iteration = 0
        self.expand(self.root, root_env.observe())

    # -- expansion ------------------------------------------------------
    def expand(self, node: SearchNode, graph: ObsGraph) -> None:
        n_total = len(graph.action_edge_index) * 2 * self.n
        if n_total == 0:
            node.terminal = True
            return
        q = _edge_q(self.params, self.gn, graph)
        k = n_total if self.cfg.full_expansion else min(self.cfg.top_k, n_total)
        if q is not None:
            flat_q = q.reshape(-1)
            # stable sort on -q: ties keep the lower index
            chosen = np.sort(np.argsort(-flat_q, kind="stable")[:k])
            node.q_prior = flat_q[chosen].copy()
        else:
            chosen = np.sort(self.rng.choice(n_total, size=k, replace=False)) if k < n_total else np.arange(n_total)
        node.flat = chosen
        node.group = chosen // (2 * self.n)
        node.actions = [flat_to_action(graph, int(f), self.n) for f in chosen]
        node.counts = np.ones(len(chosen))
        node.returns = np.zeros(len(chosen))

    # -- rollouts -------------------------------------------------------
    def rollout(self, env: Env) -> float:
        env = env.clone()
        total, depth = 0.0, 0
        cap = self.cfg.max_rollout_depth
        while not env.done and (cap is None or depth < cap):
            g = env.observe()
            n_total = len(g.action_edge_index) * 2 * self.n
            if n_total == 0:
                break
            if self.params is None or self.rng.random() < self.cfg.rollout_eps:
                flat = int(self.rng.integers(n_total))
            else:
                flat = masked_argmax(neural.q_values(self.params, self.gn, g))
            total += env.step(flat_to_action(g, flat, self.n)).reward
            depth += 1
        return total

    # -- one simulation -------------------------------------------------
    def simulate_once(self) -> None:
        node, path = self.root, []
        leaf_value = 0.0
        while True:
            if node.terminal:
                break
            a = select_action(node, self.cfg.c)
            action = node.actions[a]
            child = node.children.get(a)
            if child is None:
                graph, reward, _, done = self.model.apply(node.key, action)
                child = SearchNode(node.key + (action,), terminal=done, reward=reward)
                node.children[a] = child
                path.append((node, a, reward))
                if not done:
                    self.expand(child, graph)
                    leaf_value = 0.0 if child.terminal else self.rollout(self.model.env_at(child.key))
                break
            path.append((node, a, child.reward))
            node = child
        ret = leaf_value
        backups = []
        for parent, a, reward in reversed(path):
            ret += reward
            parent.counts[a] += 1
            parent.returns[a] += ret
            backups.append(ret)
        if self.trace is not None:
            self.trace.write(json.dumps({
                "iteration": self.iteration,
                "path": [int(p.flat[a]) for p, a, _ in path],
                "leaf_value": leaf_value,
                "backup": backups[::-1],
            }) + "\n")
        self.iteration += 1

    def run(self, budget: int) -> None:
        for _ in range(budget):
            if self.root.terminal:
                break
            self.simulate_once()

    def best(self) -> A.Action:
        root = self.root
        if root.terminal or not root.expanded:
            return A.Resign()
        values = root.action_values()
        order = sorted(range(len(root.actions)), key=lambda a: (-root.counts[a], -values[a], root.flat[a]))
        return root.actions[order[0]]


def plan_action(env: Env, params, gn: neural.GNConfig | None, cfg: MCTSConfig, seed: int | None = None,
                rng: np.random.Generator | None = None, trace: IO | None = None) -> A.Action:
    """Action chosen by ``cfg.budget`` simulations from the current state.

    Budget 0 with a prior is exactly the greedy-Q action.
    """
    g = env.observe()
    if len(g.action_edge_index) == 0:
        return A.Resign()
    if rng is None:
        rng = substream(0 if seed is None else seed, "mcts")
    if cfg.budget == 0:
        if cfg.use_prior:
            return flat_to_action(g, masked_argmax(neural.q_values(params, gn, g)), gn.n_offsets)
        n = env.cfg.n_offsets
        return flat_to_action(g, int(rng.integers(len(g.action_edge_index) * 2 * n)), n)
    search = Search(env, params, gn, cfg, rng, trace=trace)
    search.run(cfg.budget)
    return search.best()


@dataclass
class MCTSPolicy:
    """Search-wrapped agent; ``params=None`` with ``use_prior=False`` is raw MCTS."""

    params: dict | None
    gn: neural.GNConfig | None
    cfg: MCTSConfig

    def act(self, env: Env, rng: np.random.Generator) -> A.Action:
        return plan_action(env, self.params, self.gn, self.cfg, rng=rng)


__all__ = [
    "MCTSConfig", "MCTSPolicy", "PerfectModel", "Search", "SearchNode", "node_value", "plan_action", "select_action", "uct_select",
]
