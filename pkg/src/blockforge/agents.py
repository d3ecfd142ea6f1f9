"""Policies: random, heuristic baselines, greedy Q and search-wrapped Q."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import actions as A
from . import neural
from .env import Env, silhouette_reward
from .obsgraph import ObsGraph
from .physics import (
    BLOCK_H,
    COLLIDABLE,
    EPS_CONTACT,
    EPS_LEN,
    FLOOR_ID,
    HALF_W,
    Kind,
    Rect,
    Scene,
    SettleStatus,
    SpawnStatus,
    floor_body,
    rect_distance,
    settle,
    spawn,
)

POLICY_NAMES = ("random", "heur-silhouette", "heur-covering", "dqn", "dqn-mcts", "raw-mcts")


class Policy(Protocol):
    def act(self, env: Env, rng: np.random.Generator) -> A.Action: ...


def band_of(rect: Rect) -> int:
    return int(round((rect.cy - BLOCK_H / 2) / BLOCK_H))


def band_y(band: int) -> float:
    return band * BLOCK_H + BLOCK_H / 2


# ---------------------------------------------------------------------------
# random and Q-greedy


def random_valid(env: Env, rng: np.random.Generator) -> A.Action:
    # a flat index picks the same action as indexing env.valid_actions()
    g = env.observe()
    n = env.cfg.n_offsets
    total = len(g.action_edge_index) * 2 * n
    if total == 0:
        return A.Resign()
    return flat_to_action(g, int(rng.integers(total)), n)


class RandomPolicy:
    def act(self, env: Env, rng: np.random.Generator) -> A.Action:
        return random_valid(env, rng)


def masked_argmax(q: np.ndarray, valid: np.ndarray | None = None) -> int:
    """Flat index of the largest entry; ties go to the lowest index."""
    flat = np.asarray(q, dtype=float).reshape(-1)
    if valid is not None:
        flat = np.where(np.asarray(valid, dtype=bool).reshape(-1), flat, -np.inf)
    return int(np.argmax(flat))


def flat_to_action(graph: ObsGraph, flat: int, n: int = A.N_OFFSETS) -> A.DiscRel:
    e, col = divmod(flat, 2 * n)
    i, sbit = divmod(col, 2)
    u, v = graph.edge_ids(int(graph.action_edge_index[e]))
    return A.DiscRel(u, v, i, 1 if sbit else -1)


def action_to_flat(graph: ObsGraph, action: A.DiscRel, n: int = A.N_OFFSETS) -> int:
    edges = [graph.edge_ids(int(k)) for k in graph.action_edge_index]
    e = edges.index((action.sender, action.receiver))
    return e * 2 * n + 2 * action.i + (1 if action.s > 0 else 0)


def greedy_q(q: np.ndarray, graph: ObsGraph, n: int = A.N_OFFSETS) -> A.Action:
    """Argmax over the action-edge Q matrix (rows follow ``graph.action_edge_index``)."""
    if len(graph.action_edge_index) == 0:
        return A.Resign()
    return flat_to_action(graph, masked_argmax(q), n)


@dataclass
class GreedyQPolicy:
    params: dict
    cfg: neural.GNConfig

    def q(self, graph: ObsGraph) -> np.ndarray:
        return neural.q_values(self.params, self.cfg, graph)

    def act(self, env: Env, rng: np.random.Generator | None = None) -> A.Action:
        g = env.observe()
        if len(g.action_edge_index) == 0:
            return A.Resign()
        return greedy_q(self.q(g), g, self.cfg.n_offsets)


# ---------------------------------------------------------------------------
# silhouette heuristic


def _layer_ordered_targets(scene: Scene) -> list:
    targets = scene.of_kind(Kind.TARGET_BLOCK)
    if not targets:
        return []
    centre = (min(t.rect.left for t in targets) + max(t.rect.right for t in targets)) / 2
    return sorted(targets, key=lambda t: (band_of(t.rect), abs(t.rect.cx - centre), t.rect.cx, t.id))


def _supported_below(scene: Scene, rect: Rect) -> bool:
    if band_of(rect) == 0:
        return True
    for b in scene.placed:
        r = b.rect
        if abs(r.top - rect.bottom) <= EPS_CONTACT and r.left <= rect.cx <= r.right:
            return True
    return False


def _touching_sticky(scene: Scene, rect: Rect) -> bool:
    return any(b.sticky and rect_distance(b.rect, rect) <= EPS_CONTACT for b in scene.placed)


def silhouette_heuristic(env: Env, rng: np.random.Generator | None = None) -> A.Action:
    """Fill targets layer by layer, centre outwards, one block per call."""
    scene = env.state.scene
    graph = env.observe()
    matched = {t for t, _ in silhouette_reward(scene)[0]}
    edges = set(A.action_edges(graph))
    middle = env.cfg.n_offsets // 2
    for t in _layer_ordered_targets(scene):
        if t.id in matched:
            continue
        same = [b for b in scene.available if abs(b.rect.w - t.rect.w) < 1e-9 and (b.id, t.id) in edges]
        if not same:
            continue
        block = min(same, key=lambda b: b.id)
        sticky = not _supported_below(scene, t.rect) and not _touching_sticky(scene, t.rect)
        action = A.DiscRel(block.id, t.id, middle, 1 if sticky else -1)
        req = env.decode(action)
        status, _ = spawn(scene, req.proto, (req.x, req.y), req.sticky)
        if status is SpawnStatus.OK:
            return action
    return A.Resign()


class SilhouetteHeuristic:
    def act(self, env: Env, rng: np.random.Generator | None = None) -> A.Action:
        return silhouette_heuristic(env, rng)


# ---------------------------------------------------------------------------
# covering heuristic


def _subtract(spans: list[tuple[float, float]], cut: tuple[float, float]) -> list[tuple[float, float]]:
    out = []
    for lo, hi in spans:
        if cut[1] <= lo or cut[0] >= hi:
            out.append((lo, hi))
            continue
        if cut[0] > lo:
            out.append((lo, cut[0]))
        if cut[1] < hi:
            out.append((cut[1], hi))
    return out


def _pack(lo: float, hi: float, widths: tuple[float, ...]) -> list[tuple[float, float]]:
    """(centre, width) of blocks packed into [lo, hi] from both ends inward, large first."""
    out, left = [], True
    while True:
        fit = [w for w in widths if w <= hi - lo + 1e-9]
        if not fit:
            return out
        w = max(fit)
        if left:
            out.append((lo + w / 2, w))
            lo += w
        else:
            out.append((hi - w / 2, w))
            hi -= w
        left = not left


@dataclass(frozen=True)
class Placement:
    rect: Rect
    cover: bool  # bridges an obstacle of the band below
    span: tuple[float, float]  # free interval the block must stay inside


COVER_MARGIN = 0.05
MAX_PROBES = 8  # simulated candidates per desired block
HULL_PAD = 3.5


def covering_plan(scene: Scene, widths: tuple[float, ...] = (0.7, 2.1, 3.5)) -> list[Placement]:
    """Desired blocks not yet built, bottom band first.

    A band holding obstacles is filled in its gaps; the band above covers
    each obstacle with the widest block centred on it, then fills the rest
    so the next band has something to stand on.
    """
    obstacles = scene.obstacles
    if not obstacles:
        return []
    lo = max(-HALF_W, min(o.rect.left for o in obstacles) - HULL_PAD)
    hi = min(HALF_W, max(o.rect.right for o in obstacles) + HULL_PAD)
    by_band: dict[int, list] = {}
    for o in obstacles:
        by_band.setdefault(band_of(o.rect), []).append(o)
    top = max(by_band) + 1
    placed_by_band: dict[int, list[Rect]] = {}
    for b in scene.placed:
        placed_by_band.setdefault(band_of(b.rect), []).append(b.rect)

    plan: list[Placement] = []
    for band in range(top + 1):
        free = [(lo, hi)]
        for o in by_band.get(band, []):
            free = _subtract(free, (o.rect.left - COVER_MARGIN, o.rect.right + COVER_MARGIN))
        for r in placed_by_band.get(band, []):
            free = _subtract(free, (r.left - 1e-3, r.right + 1e-3))
        y = band_y(band)
        for o in sorted(by_band.get(band - 1, []), key=lambda o: (-o.rect.w, o.rect.cx)):
            w = max(widths)
            span = (o.rect.cx - w / 2, o.rect.cx + w / 2)
            room = next(((a, b) for a, b in free if a <= span[0] + 1e-9 and span[1] <= b + 1e-9), None)
            if room is not None:
                plan.append(Placement(Rect(o.rect.cx, y, w, BLOCK_H), True, room))
                free = _subtract(free, span)
        for a, b in free:
            for cx, w in _pack(a, b, widths):
                plan.append(Placement(Rect(cx, y, w, BLOCK_H), False, (a, b)))
    return plan


def _simulate(scene: Scene, req: A.SpawnRequest):
    status, out = spawn(scene, req.proto, (req.x, req.y), req.sticky)
    if status is not SpawnStatus.OK:
        return None
    res = settle(out)
    if res.status is not SettleStatus.SETTLED:
        return None
    new_id = out.next_id - 1
    if any(i != new_id for i in res.moved_ids):
        return None
    return out.get(new_id).rect


class _DropTable:
    """Vectorized straight-drop rest heights against a fixed scene."""

    def __init__(self, scene: Scene):
        solid = [b.rect for b in scene.bodies if b.kind in COLLIDABLE]
        self.left = np.array([r.left for r in solid])
        self.right = np.array([r.right for r in solid])
        self.top = np.array([r.top for r in solid])

    def rest(self, rect: Rect) -> float | None:
        over = np.minimum(self.right, rect.right) - np.maximum(self.left, rect.left) > EPS_LEN
        under = over & (self.top <= rect.bottom + EPS_LEN)
        if not under.any():
            return None
        return float(self.top[under].max()) + rect.h / 2


def covering_heuristic(env: Env, rng: np.random.Generator | None = None, cover_tol: float = 0.35) -> A.Action:
    """Execute the first feasible step of :func:`covering_plan`.

    A desired block is realized by the discrete-relative action whose landing
    spot is closest to it; covers must land within ``cover_tol`` of the
    obstacle centre, fillers anywhere inside their free interval.
    """
    scene = env.state.scene
    graph = env.observe()
    edges = A.action_edges(graph)
    n = env.cfg.n_offsets
    bodies = {b.id: b for b in scene.bodies}
    widths = tuple(sorted({b.rect.w for b in scene.available}))
    if not widths:
        return A.Resign()
    table = _DropTable(scene)
    for want in covering_plan(scene, widths):
        senders = [b for b in scene.available if abs(b.rect.w - want.rect.w) < 1e-9]
        if not senders:
            continue
        sender = min(senders, key=lambda b: b.id)
        half = want.rect.w / 2
        lo, hi = want.span[0] + half, want.span[1] - half
        if want.cover:
            lo, hi = max(lo, want.rect.cx - cover_tol), min(hi, want.rect.cx + cover_tol)
        cands = []
        for u, v in edges:
            if u != sender.id:
                continue
            ref = floor_body() if v == FLOOR_ID else bodies[v]
            xs = ref.rect.cx + A.offset_grid(n, ref.rect.w, sender.rect.w)
            for i, x in enumerate(xs):
                if lo - 1e-9 <= x <= hi + 1e-9:
                    cands.append((abs(x - want.rect.cx), v, i))
        probes = 0
        for _, v, i in sorted(cands):
            action = A.DiscRel(sender.id, v, i, -1)
            req = env.decode(action)
            # cheap vertical-drop check before a full settle
            rest = table.rest(req.proto)
            if rest is None or abs(rest - want.rect.cy) > 1e-6:
                continue
            probes += 1
            if probes > MAX_PROBES:
                break
            final = _simulate(scene, req)
            if final is not None and abs(final.cy - want.rect.cy) < 1e-6:
                return action
    return A.Resign()


class CoveringHeuristic:
    def act(self, env: Env, rng: np.random.Generator | None = None) -> A.Action:
        return covering_heuristic(env, rng)
