"""Episode state machine: decode, spawn, settle, score."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable

from . import actions as A
from .obsgraph import Connectivity, ObsGraph, build_graph
from .physics import (
    EPS_GEOM,
    Kind,
    Scene,
    SettleStatus,
    SpawnStatus,
    overlap_area,
    settle,
    spawn,
)
from .scenegen import GeneratedScene, TaskId

STICKY_PENALTY = {
    TaskId.SILHOUETTE: 0.5,
    TaskId.CONNECTING: 0.0,
    TaskId.COVERING: 2.0,
    TaskId.COVERING_HARD: 0.5,
}
MATCH_RATIO = 0.9
COVER_FRACTION = 0.99
SIZE_TOL = 1e-9


class TerminationReason(str, enum.Enum):
    COMPLETED = "completed"
    MAX_STEPS = "max_steps"
    OBSTACLE_HIT = "obstacle_hit"
    BAD_SPAWN = "bad_spawn"
    WRONG_EDGE = "wrong_edge"
    UNSETTLED = "unsettled"
    OUT_OF_BLOCKS = "out_of_blocks"


class EpisodeOver(RuntimeError):
    """Raised when acting on an episode that has already terminated."""


@dataclass(frozen=True)
class EnvConfig:
    max_steps: int = 40
    n_offsets: int = A.N_OFFSETS
    connectivity: str = Connectivity.FULL.value
    floor_proxy: str = "auto"
    disc_abs_grid: tuple[int, int] = A.DISC_ABS_GRID
    sticky_penalty: float | None = None  # None -> task default


@dataclass
class Inventory:
    counts: dict[float, int]
    unlimited: bool

    @classmethod
    def for_task(cls, task: TaskId, scene: Scene) -> "Inventory":
        counts: dict[float, int] = {}
        for b in scene.available:
            counts[b.rect.w] = counts.get(b.rect.w, 0) + 1
        return cls(counts, unlimited=task is not TaskId.COVERING_HARD)

    def permits(self, w: float) -> bool:
        return self.unlimited or self.counts.get(w, 0) > 0

    def take(self, w: float) -> None:
        if not self.unlimited:
            self.counts[w] -= 1

    @property
    def empty(self) -> bool:
        return not self.unlimited and sum(self.counts.values()) == 0


@dataclass(frozen=True)
class StepResult:
    reward: float
    done: bool
    reason: TerminationReason | None = None


# ---------------------------------------------------------------------------
# task metrics


def silhouette_reward(scene: Scene) -> tuple[list[tuple[int, int]], int]:
    """Greedy one-to-one (target, block) matching by overlap ratio, best first."""
    cands = []
    for t in scene.of_kind(Kind.TARGET_BLOCK):
        for b in scene.placed:
            if abs(b.rect.w - t.rect.w) > SIZE_TOL or abs(b.rect.h - t.rect.h) > SIZE_TOL:
                continue
            ratio = overlap_area(b.rect, t.rect) / t.rect.area
            if ratio >= MATCH_RATIO:
                cands.append((-ratio, t.id, b.id))
    cands.sort()
    used_t, used_b, pairs = set(), set(), []
    for _, t, b in cands:
        if t not in used_t and b not in used_b:
            used_t.add(t)
            used_b.add(b)
            pairs.append((t, b))
    return pairs, len(pairs)


def connecting_reward(scene: Scene) -> int:
    blocks = [b.rect for b in scene.placed]
    n = 0
    for t in scene.of_kind(Kind.TARGET_POINT):
        x, y = t.rect.cx, t.rect.cy
        if any(r.left - EPS_GEOM <= x <= r.right + EPS_GEOM and r.bottom - EPS_GEOM <= y <= r.top + EPS_GEOM
               for r in blocks):
            n += 1
    return n


def union_length(intervals: Iterable[tuple[float, float]]) -> float:
    total, cur_lo, cur_hi = 0.0, None, None
    for lo, hi in sorted(intervals):
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def covering_length(scene: Scene) -> float:
    """Summed length of obstacle tops sheltered by some block above them."""
    blocks = [b.rect for b in scene.placed]
    total = 0.0
    for o in scene.obstacles:
        r = o.rect
        spans = [(max(b.left, r.left), min(b.right, r.right)) for b in blocks
                 if b.cy > r.top and min(b.right, r.right) > max(b.left, r.left)]
        total += union_length(spans)
    return total


def total_obstacle_length(scene: Scene) -> float:
    return sum(o.rect.w for o in scene.obstacles)


def task_metric(task: TaskId, scene: Scene) -> float:
    if task is TaskId.SILHOUETTE:
        return float(silhouette_reward(scene)[1])
    if task is TaskId.CONNECTING:
        return float(connecting_reward(scene))
    return covering_length(scene)


def task_complete(task: TaskId, scene: Scene, metric: float) -> bool:
    if task is TaskId.SILHOUETTE:
        return metric >= len(scene.of_kind(Kind.TARGET_BLOCK))
    if task is TaskId.CONNECTING:
        return metric >= len(scene.of_kind(Kind.TARGET_POINT))
    total = total_obstacle_length(scene)
    return total > 0 and metric >= COVER_FRACTION * total


def sticky_penalty(task: TaskId | str) -> float:
    return STICKY_PENALTY[TaskId(task)]


# ---------------------------------------------------------------------------
# episode


@dataclass
class EpisodeState:
    scene: Scene
    inventory: Inventory
    task: TaskId
    step: int = 0
    accrued_reward: float = 0.0
    metric: float = 0.0
    terminated: TerminationReason | None = None

    def copy(self) -> "EpisodeState":
        return replace(self, scene=self.scene.copy(),
                       inventory=Inventory(dict(self.inventory.counts), self.inventory.unlimited))


@dataclass
class Env:
    """One episode. ``step`` takes an Action; ``apply`` takes a decoded request."""

    task: TaskId
    initial_scene: Scene
    cfg: EnvConfig = field(default_factory=EnvConfig)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task = TaskId(self.task)
        self.reset()

    @classmethod
    def from_generated(cls, gen: GeneratedScene, cfg: EnvConfig | None = None) -> "Env":
        return cls(gen.task, gen.scene, cfg or EnvConfig(), gen.header())

    def reset(self) -> None:
        scene = self.initial_scene.copy()
        self.state = EpisodeState(scene, Inventory.for_task(self.task, scene), self.task,
                                  metric=task_metric(self.task, scene))
        self.log: list[dict] = []
        self._graph: ObsGraph | None = None

    def clone(self) -> "Env":
        """Independent copy sharing only immutable data."""
        out = object.__new__(Env)
        out.task, out.initial_scene, out.cfg, out.meta = self.task, self.initial_scene, self.cfg, self.meta
        out.state = self.state.copy()
        out.log = list(self.log)
        out._graph = self._graph
        return out

    # -- observation ---------------------------------------------------
    @property
    def done(self) -> bool:
        return self.state.terminated is not None

    @property
    def penalty(self) -> float:
        p = self.cfg.sticky_penalty
        return STICKY_PENALTY[self.task] if p is None else p

    def observe(self) -> ObsGraph:
        if self._graph is None:
            self._graph = build_graph(self.state.scene, self.cfg.connectivity, self.cfg.floor_proxy)
        return self._graph

    def valid_actions(self) -> list[A.DiscRel]:
        return A.enumerate_disc_rel(self.observe(), self.cfg.n_offsets)

    def decode(self, action: A.Action) -> A.SpawnRequest | None:
        s = self.state.scene
        if isinstance(action, A.DiscRel):
            return A.decode_disc_rel(s, self.observe(), action, self.cfg.n_offsets)
        if isinstance(action, A.DiscAbs):
            return A.decode_disc_abs(s, action.u, action.i, action.j, action.s, self.cfg.disc_abs_grid)
        if isinstance(action, A.ContRel):
            return A.decode_cont_rel(s, action.X, action.x, action.y, action.dx, action.s, self.cfg.floor_proxy)
        return A.decode(s, None, action)

    # -- transitions ---------------------------------------------------
    def step(self, action: A.Action) -> StepResult:
        if self.done:
            raise EpisodeOver(f"episode already ended ({self.state.terminated.value})")
        if isinstance(action, A.Resign):
            res = self._finish(0.0, TerminationReason.MAX_STEPS)
        else:
            req = self.decode(action)
            res = self._finish(0.0, TerminationReason.WRONG_EDGE) if req is None else self.apply(req)
        self._record(action, res)
        return res

    def apply(self, req: A.SpawnRequest) -> StepResult:
        st = self.state
        st.step += 1
        if not st.inventory.permits(req.w):
            return self._finish(0.0, TerminationReason.WRONG_EDGE)
        status, scene = spawn(st.scene, req.proto, (req.x, req.y), req.sticky)
        if status is SpawnStatus.OBSTACLE_OVERLAP:
            return self._finish(-st.accrued_reward, TerminationReason.OBSTACLE_HIT)
        if status is SpawnStatus.BAD_SPAWN:
            return self._finish(0.0, TerminationReason.BAD_SPAWN)
        outcome = settle(scene)
        if outcome.status is SettleStatus.OBSTACLE_HIT:
            st.scene = scene
            self._graph = None
            return self._finish(-st.accrued_reward, TerminationReason.OBSTACLE_HIT)
        if outcome.status is SettleStatus.UNSETTLED:
            return self._finish(0.0, TerminationReason.UNSETTLED)

        if not st.inventory.unlimited:
            scene.remove(req.source_id)
            st.inventory.take(req.w)
        st.scene = scene
        self._graph = None
        metric = task_metric(self.task, scene)
        reward = metric - st.metric - (self.penalty if req.sticky else 0.0)
        st.metric = metric
        if task_complete(self.task, scene, metric):
            return self._finish(reward, TerminationReason.COMPLETED)
        if st.inventory.empty:
            return self._finish(reward, TerminationReason.OUT_OF_BLOCKS)
        if st.step >= self.cfg.max_steps:
            return self._finish(reward, TerminationReason.MAX_STEPS)
        st.accrued_reward += reward
        return StepResult(reward, False)

    def _finish(self, reward: float, reason: TerminationReason) -> StepResult:
        st = self.state
        st.accrued_reward += reward
        if reason is TerminationReason.OBSTACLE_HIT:
            st.accrued_reward = 0.0  # exact, whatever the rounding of the sum
        st.terminated = reason
        return StepResult(reward, True, reason)

    # -- logging -------------------------------------------------------
    def _record(self, action: A.Action, res: StepResult) -> None:
        self.log.append({
            "step": len(self.log) + 1,
            "action": A.action_to_dict(action),
            "reward": res.reward,
            "done": res.done,
            "reason": None if res.reason is None else res.reason.value,
            "scene_hash": self.state.scene.content_hash(),
        })

    def header(self) -> dict:
        return {"task": self.task.value, "meta": self.meta, "config": _cfg_dict(self.cfg),
                "scene": self.initial_scene.to_dict()}

    def dump_log(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.log]
        return "\n".join(lines) + "\n"


def _cfg_dict(cfg: EnvConfig) -> dict:
    d = dict(cfg.__dict__)
    d["disc_abs_grid"] = list(cfg.disc_abs_grid)
    return d


def load_log(text: str) -> tuple[dict, list[dict]]:
    lines = [json.loads(line) for line in text.splitlines() if line.strip()]
    return lines[0], lines[1:]


def env_from_header(header: dict) -> Env:
    cfg = dict(header.get("config", {}))
    if "disc_abs_grid" in cfg:
        cfg["disc_abs_grid"] = tuple(cfg["disc_abs_grid"])
    return Env(TaskId(header["task"]), Scene.from_dict(header["scene"]), EnvConfig(**cfg), header.get("meta", {}))


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    steps: int
    total_reward: float
    logged_reward: float
    first_mismatch: int | None = None


def replay(text: str) -> ReplayReport:
    """Re-run a logged episode and compare scene hashes and rewards step by step."""
    header, records = load_log(text)
    env = env_from_header(header)
    total = 0.0
    for rec in records:
        res = env.step(A.action_from_dict(rec["action"]))
        total += res.reward
        if (env.state.scene.content_hash() != rec["scene_hash"] or res.reward != rec["reward"]
                or res.done != rec["done"]):
            return ReplayReport(False, rec["step"], total, sum(r["reward"] for r in records), rec["step"])
    logged = sum(r["reward"] for r in records)
    return ReplayReport(total == logged, len(records), total, logged)


def run_episode(env: Env, policy, rng) -> float:
    """Roll ``policy`` until termination; returns the episode return."""
    total = 0.0
    while not env.done:
        total += env.step(policy.act(env, rng)).reward
    return total


__all__ = [
    "Env", "EnvConfig", "EpisodeOver", "EpisodeState", "Inventory", "ReplayReport",
    "StepResult", "TerminationReason", "connecting_reward", "covering_length", "load_log",
    "replay", "run_episode", "silhouette_reward", "sticky_penalty", "task_metric",
]
