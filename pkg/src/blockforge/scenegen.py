"""Procedural scenes and curricula for the four construction tasks."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .physics import BLOCK_H, BLOCK_WIDTHS, EPS_LEN, HALF_W, Kind, Rect, Scene, overlap_length, rect_distance
from .rng import substream


class TaskId(str, enum.Enum):
    SILHOUETTE = "silhouette"
    CONNECTING = "connecting"
    COVERING = "covering"
    COVERING_HARD = "covering_hard"


MAX_LEVEL = {
    TaskId.SILHOUETTE: 8,
    TaskId.CONNECTING: 4,
    TaskId.COVERING: 3,
    TaskId.COVERING_HARD: 2,
}

# three small, three medium and one large block
AVAILABLE_WIDTHS = (0.7, 0.7, 0.7, 2.1, 2.1, 2.1, 3.5)
AVAILABLE_Y = -1.0
SEPARATION = 0.35
MAX_LAYERS = 6
TARGET_POINT_SIZE = 0.2
OBSTACLE_THICKNESS = 0.35
MAX_RETRIES = 100


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LevelSpec:
    task: TaskId
    level: int
    max_level: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "task", TaskId(self.task))
        if self.max_level is None:
            object.__setattr__(self, "max_level", MAX_LEVEL[self.task])
        if not 1 <= self.level <= self.max_level:
            raise ValueError(f"level {self.level} outside 1..{self.max_level}")


@dataclass(frozen=True)
class GenConfig:
    rng_seed: int = 0
    hardest_only: bool = False
    # weight of a candidate cell is 1 + height_bias * layer
    height_bias: float = 1.0
    # obstacle layer pitch in units of block height (3 -> 2.1 m)
    connecting_pitch: int = 3
    covering_pitch: int = 3
    covering_hard_pitch: int = 2
    min_obstacle_gap: float = 0.5


@dataclass
class GeneratedScene:
    scene: Scene
    task: TaskId
    level: int
    seed: int
    index: int
    stats: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {"task": self.task.value, "level": self.level, "seed": self.seed,
                "index": self.index, "stats": self.stats}


def base_scene() -> Scene:
    """Floor plus the seven available blocks laid out under the floor."""
    scene = Scene()
    total = sum(AVAILABLE_WIDTHS) + SEPARATION * (len(AVAILABLE_WIDTHS) - 1)
    x = -total / 2
    for w in AVAILABLE_WIDTHS:
        scene.add(Rect(x + w / 2, AVAILABLE_Y, w, BLOCK_H), Kind.AVAILABLE)
        x += w + SEPARATION
    return scene


def band_y(band: int) -> float:
    """Centre height of the ``band``-th block-height row above the floor."""
    return BLOCK_H * band + BLOCK_H / 2


# ---------------------------------------------------------------------------
# tessellation


@dataclass(frozen=True)
class Cell:
    layer: int
    index: int
    rect: Rect
    supports: tuple[int, ...]  # indices of overlapping cells in the layer below


def tessellate(rng: np.random.Generator | None = None, n_layers: int = MAX_LAYERS,
               separation: float = SEPARATION) -> list[list[Cell]]:
    """Rows of block-sized cells, flush vertically, ``separation`` apart horizontally.

    With ``rng`` the width sequence and horizontal phase of every row are
    random; without it the widths cycle and each row is shifted by one
    separation so rows interleave.
    """
    layers: list[list[Cell]] = []
    for layer in range(n_layers):
        if rng is None:
            phase = (layer % 3) * separation
        else:
            phase = float(rng.uniform(0.0, BLOCK_WIDTHS[-1]))
        x = -HALF_W + separation + phase
        cells = []
        k = 0
        while True:
            if rng is None:
                w = BLOCK_WIDTHS[(k + layer) % len(BLOCK_WIDTHS)]
            else:
                w = BLOCK_WIDTHS[int(rng.integers(len(BLOCK_WIDTHS)))]
            if x + w > HALF_W - separation + 1e-9:
                # try to fit a smaller block at the end of the row
                fits = [v for v in BLOCK_WIDTHS if x + v <= HALF_W - separation + 1e-9]
                if not fits:
                    break
                w = fits[-1]
            rect = Rect(x + w / 2, band_y(layer), w, BLOCK_H)
            below = layers[layer - 1] if layer else []
            supports = tuple(c.index for c in below
                             if overlap_length(rect.left, rect.right, c.rect.left, c.rect.right) > EPS_LEN)
            cells.append(Cell(layer, len(cells), rect, supports))
            x += w + separation
            k += 1
        layers.append(cells)
    return layers


def _weighted_pick(rng: np.random.Generator, items: list, weights: list[float]):
    w = np.asarray(weights, dtype=float)
    return items[int(rng.choice(len(items), p=w / w.sum()))]


# ---------------------------------------------------------------------------
# per-task parameter bounds (monotone in level)


def silhouette_bounds(level: int) -> dict:
    return {"targets": level, "max_obstacles": min(level - 1, 6), "layers": min(level, MAX_LAYERS)}


def connecting_bounds(level: int) -> dict:
    return {"obstacle_layers": level - 1, "max_per_layer": 3, "targets": 3}


def covering_bounds(level: int, hard: bool) -> dict:
    if hard:
        # one lone obstacle first, then two layers of one or two obstacles
        return {"obstacle_layers": level, "min_per_layer": 1, "max_per_layer": 1 if level == 1 else 2}
    return {"obstacle_layers": level, "min_per_layer": 1, "max_per_layer": 2}


def level_bounds(task: TaskId, level: int) -> dict:
    task = TaskId(task)
    if task is TaskId.SILHOUETTE:
        return silhouette_bounds(level)
    if task is TaskId.CONNECTING:
        return connecting_bounds(level)
    return covering_bounds(level, task is TaskId.COVERING_HARD)


# ---------------------------------------------------------------------------
# generators


def _try_silhouette(level: int, rng: np.random.Generator, cfg: GenConfig) -> Scene | None:
    b = silhouette_bounds(level)
    layers = tessellate(rng, b["layers"])
    cells = [c for row in layers for c in row]
    targets: set[tuple[int, int]] = set()
    for _ in range(b["targets"]):
        cand = [c for c in cells if (c.layer, c.index) not in targets
                and (c.layer == 0 or any((c.layer - 1, s) in targets for s in c.supports))]
        if not cand:
            return None
        pick = _weighted_pick(rng, cand, [1 + cfg.height_bias * c.layer for c in cand])
        targets.add((pick.layer, pick.index))
    target_rects = [layers[l][i].rect for l, i in sorted(targets)]

    n_obs = int(rng.integers(0, b["max_obstacles"] + 1))
    obstacles: set[tuple[int, int]] = set()
    for _ in range(n_obs):
        cand = [c for c in cells if (c.layer, c.index) not in targets | obstacles
                and (c.layer == 0 or any((c.layer - 1, s) in obstacles for s in c.supports))
                and all(rect_distance(c.rect, t) > 0.1 for t in target_rects)]
        if not cand:
            break
        pick = _weighted_pick(rng, cand, [1 + cfg.height_bias * c.layer for c in cand])
        obstacles.add((pick.layer, pick.index))

    scene = base_scene()
    for l, i in sorted(obstacles):
        scene.add(layers[l][i].rect, Kind.OBSTACLE)
    for rect in target_rects:
        scene.add(rect, Kind.TARGET_BLOCK)
    return scene


def _sample_row(rng: np.random.Generator, widths: list[float], gap: float,
                lo: float = -HALF_W + 0.5, hi: float = HALF_W - 0.5) -> list[float] | None:
    """Rejection-sample non-overlapping centres for segments of the given widths."""
    for _ in range(200):
        xs = [float(rng.uniform(lo + w / 2, hi - w / 2)) for w in widths]
        spans = sorted((x - w / 2, x + w / 2) for x, w in zip(xs, widths))
        if all(spans[k + 1][0] - spans[k][1] >= gap for k in range(len(spans) - 1)):
            return xs
    return None


def _obstacle_layers(rng, n_layers, pitch, count_range, width_range, cfg) -> list[Rect] | None:
    rects = []
    for layer in range(n_layers):
        n = int(rng.integers(count_range[0], count_range[1] + 1))
        widths = [float(rng.uniform(*width_range)) for _ in range(n)]
        xs = _sample_row(rng, widths, cfg.min_obstacle_gap)
        if xs is None:
            return None
        y = band_y(layer * pitch)
        rects += [Rect(x, y, w, OBSTACLE_THICKNESS) for x, w in zip(xs, widths)]
    return rects


def _try_connecting(level: int, rng: np.random.Generator, cfg: GenConfig) -> Scene | None:
    b = connecting_bounds(level)
    n_layers = b["obstacle_layers"]
    obstacles = _obstacle_layers(rng, n_layers, cfg.connecting_pitch, (1, b["max_per_layer"]),
                                 (0.7, 2.8), cfg)
    if obstacles is None:
        return None
    target_band = cfg.connecting_pitch * n_layers - 1 if n_layers else 1
    xs = _sample_row(rng, [TARGET_POINT_SIZE] * b["targets"], 1.5, -6.0, 6.0)
    if xs is None:
        return None
    scene = base_scene()
    for r in obstacles:
        scene.add(r, Kind.OBSTACLE)
    for x in sorted(xs):
        scene.add(Rect(x, band_y(target_band), TARGET_POINT_SIZE, TARGET_POINT_SIZE), Kind.TARGET_POINT)
    return scene


def _try_covering(level: int, rng: np.random.Generator, cfg: GenConfig, hard: bool) -> Scene | None:
    b = covering_bounds(level, hard)
    pitch = cfg.covering_hard_pitch if hard else cfg.covering_pitch
    widths = (0.7, 3.5) if hard else (0.7, 2.8)
    obstacles = _obstacle_layers(rng, b["obstacle_layers"], pitch,
                                 (b["min_per_layer"], b["max_per_layer"]), widths, cfg)
    if obstacles is None:
        return None
    scene = base_scene()
    for r in obstacles:
        scene.add(r, Kind.OBSTACLE)
    return scene


def scene_stats(scene: Scene) -> dict:
    obs = scene.obstacles
    tgts = scene.targets
    return {
        "n_targets": len(tgts),
        "n_obstacles": len(obs),
        "obstacle_length": sum(o.rect.w for o in obs),
        "max_target_height": max((t.rect.top for t in tgts), default=0.0),
        "max_obstacle_height": max((o.rect.top for o in obs), default=0.0),
    }


def generate(task: TaskId | str, level: int, seed: int, index: int = 0,
             cfg: GenConfig | None = None) -> GeneratedScene:
    """Scene ``index`` of curriculum row ``level``; a pure function of its arguments."""
    task = TaskId(task)
    cfg = cfg or GenConfig(rng_seed=seed)
    LevelSpec(task, level)
    for attempt in range(MAX_RETRIES):
        rng = substream(seed, "scene", task.value, level, index, attempt)
        if task is TaskId.SILHOUETTE:
            scene = _try_silhouette(level, rng, cfg)
        elif task is TaskId.CONNECTING:
            scene = _try_connecting(level, rng, cfg)
        else:
            scene = _try_covering(level, rng, cfg, task is TaskId.COVERING_HARD)
        if scene is not None:
            return GeneratedScene(scene, task, level, seed, index, scene_stats(scene))
    raise GenerationError(f"no valid {task.value} scene at level {level} (seed={seed}, index={index})")


def current_max_level(progress: float, max_level: int) -> int:
    return max(1, min(max_level, math.ceil(progress * max_level)))


def sample_level(progress: float, max_level: int, rng: np.random.Generator,
                 hardest_only: bool = False) -> int:
    """Curriculum row for an episode: uniform over rows unlocked so far."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress {progress} outside [0, 1]")
    top = current_max_level(progress, max_level)
    if hardest_only:
        return top
    return int(rng.integers(1, top + 1))


def training_scene(task: TaskId | str, progress: float, seed: int, index: int,
                   hardest_only: bool = False, cfg: GenConfig | None = None) -> GeneratedScene:
    """Draw a level from the curriculum, then the scene, both keyed by (seed, index)."""
    task = TaskId(task)
    rng = substream(seed, "level", task.value, index)
    level = sample_level(progress, MAX_LEVEL[task], rng, hardest_only)
    return generate(task, level, seed, index, cfg)
