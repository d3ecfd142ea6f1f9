"""The four action parameterizations and their decoders into spawn requests.

Continuous components live in [-1, 1] and are scaled to the 16 x 16 world:
x -> 8x, y -> 8(y + 1). Discrete stickiness is s in {-1, +1}; a block is
sticky iff s > 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from .obsgraph import REFERENCE_KINDS, ObsGraph, action_edges, wants_floor_proxy
from .physics import FLOOR_ID, HALF_W, Body, Kind, Rect, Scene, floor_body

EPS_X = 0.04
EPS_Y = 0.04
N_OFFSETS = 15
DISC_ABS_GRID = (8, 64)  # rows x columns
FIRST_AVAILABLE_ID = 1


@dataclass(frozen=True)
class ContAbs:
    X: float
    x: float
    y: float
    s: float


@dataclass(frozen=True)
class ContRel:
    X: float
    x: float
    y: float
    dx: float
    s: float


@dataclass(frozen=True)
class DiscAbs:
    u: int
    i: int
    j: int
    s: int


@dataclass(frozen=True)
class DiscRel:
    sender: int  # available block id
    receiver: int  # reference body id (0 = floor proxy)
    i: int
    s: int
    j: int | None = None  # vertical offset index, relative-y variant only

    @property
    def sticky(self) -> bool:
        return self.s > 0


@dataclass(frozen=True)
class Resign:
    pass


Action = Union[ContAbs, ContRel, DiscAbs, DiscRel, Resign]
_TAGS = {ContAbs: "cont_abs", ContRel: "cont_rel", DiscAbs: "disc_abs", DiscRel: "disc_rel", Resign: "resign"}
_BY_TAG = {v: k for k, v in _TAGS.items()}


def action_to_dict(a: Action) -> dict:
    d = {"type": _TAGS[type(a)], **asdict(a)}
    if d.get("j", 0) is None:
        del d["j"]
    return d


def action_from_dict(d: dict) -> Action:
    d = dict(d)
    cls = _BY_TAG[d.pop("type")]
    return cls(**d)


@dataclass(frozen=True)
class SpawnRequest:
    w: float
    h: float
    x: float
    y: float
    sticky: bool
    source_id: int

    @property
    def proto(self) -> Rect:
        return Rect(self.x, self.y, self.w, self.h)


# ---------------------------------------------------------------------------
# helpers


def offset_grid(n: int, w_r: float, w_c: float) -> np.ndarray:
    """``n`` evenly spaced offsets, endpoints +-(w_r + w_c)/2 * (1 + 1/(n - 3)).

    Built from integer numerators so values[k] == -values[n - 1 - k] exactly.
    """
    if n < 4:
        raise ValueError(f"offset grid needs n >= 4, got {n}")
    half = (w_r + w_c) / 2 * (1 + 1 / (n - 3))
    return np.array([half * ((2 * k - (n - 1)) / (n - 1)) for k in range(n)])


def references(scene: Scene, floor_proxy: str = "auto") -> list[Body]:
    refs = [b for b in scene.bodies if b.kind in REFERENCE_KINDS and b.kind is not Kind.FLOOR]
    if wants_floor_proxy(scene, floor_proxy):
        refs.insert(0, floor_body())
    return sorted(refs, key=lambda b: b.id)


def _nearest(bodies: list[Body], key) -> Body:
    # ties go to the lowest id
    return min(bodies, key=lambda b: (key(b), b.id))


def relative_y(ref: Body, h_c: float) -> float:
    r = ref.rect
    if ref.kind in (Kind.TARGET_BLOCK, Kind.TARGET_POINT):
        return r.cy + EPS_Y
    return r.cy + (r.h + h_c) / 2 + EPS_Y


def _request(block: Body, x: float, y: float, sticky: bool) -> SpawnRequest:
    return SpawnRequest(block.rect.w, block.rect.h, float(x), float(y), bool(sticky), block.id)


# ---------------------------------------------------------------------------
# decoders


def decode_cont_abs(scene: Scene, X: float, x: float, y: float, s: float) -> SpawnRequest | None:
    avail = scene.available
    if not avail:
        return None
    c = _nearest(avail, lambda b: abs(b.rect.cx - HALF_W * X))
    return _request(c, HALF_W * x, HALF_W * (y + 1), s > 0)


def decode_cont_rel(scene: Scene, X: float, x: float, y: float, dx: float, s: float,
                    floor_proxy: str = "auto") -> SpawnRequest | None:
    avail = scene.available
    refs = references(scene, floor_proxy)
    if not avail or not refs:
        return None
    c = _nearest(avail, lambda b: abs(b.rect.cx - HALF_W * X))
    px, py = HALF_W * x, HALF_W * (y + 1)
    r = _nearest(refs, lambda b: (b.rect.cx - px) ** 2 + (b.rect.cy - py) ** 2)
    x_p = r.rect.cx + dx * ((r.rect.w + c.rect.w) / 2 + EPS_X)
    return _request(c, x_p, relative_y(r, c.rect.h), s > 0)


def disc_abs_cell(i: int, j: int, grid: tuple[int, int] = DISC_ABS_GRID) -> tuple[float, float]:
    """Centre of cell (row i from the bottom, column j from the left)."""
    rows, cols = grid
    return -HALF_W + (j + 0.5) * 2 * HALF_W / cols, (i + 0.5) * 2 * HALF_W / rows


def decode_disc_abs(scene: Scene, u: int, i: int, j: int, s: int,
                    grid: tuple[int, int] = DISC_ABS_GRID) -> SpawnRequest | None:
    rows, cols = grid
    if not (0 <= i < rows and 0 <= j < cols):
        raise ValueError(f"cell ({i}, {j}) outside {rows}x{cols} grid")
    slot_id = FIRST_AVAILABLE_ID + u
    block = next((b for b in scene.available if b.id == slot_id), None)
    if block is None:
        return None
    x, y = disc_abs_cell(i, j, grid)
    return _request(block, x, y, s > 0)


def decode_disc_rel(scene: Scene, graph: ObsGraph, action: DiscRel, n: int = N_OFFSETS) -> SpawnRequest | None:
    """Spawn request for an edge action, or None if the edge is not an action edge."""
    if (action.sender, action.receiver) not in graph.action_pair_set:
        return None
    c = next(b for b in scene.bodies if b.id == action.sender)
    r = floor_body() if action.receiver == FLOOR_ID else next(b for b in scene.bodies if b.id == action.receiver)
    x_p = r.rect.cx + offset_grid(n, r.rect.w, c.rect.w)[action.i]
    y_p = relative_y(r, c.rect.h)
    if action.j is not None:
        y_p += offset_grid(n, r.rect.h, c.rect.h)[action.j]
    return _request(c, x_p, y_p, action.sticky)


def enumerate_disc_rel(graph: ObsGraph, n: int = N_OFFSETS) -> list[DiscRel]:
    """Every (action edge, offset, stickiness) triple, in Q-output order."""
    return [DiscRel(u, v, i, s) for u, v in action_edges(graph) for i in range(n) for s in (-1, 1)]


def q_index(graph: ObsGraph, flat: int, n: int = N_OFFSETS) -> tuple[int, int]:
    """Map a flat action index to (edge row, column) of the edge Q matrix."""
    e, rest = divmod(flat, 2 * n)
    return int(graph.action_edge_index[e]), rest


def decode(scene: Scene, graph: ObsGraph | None, action: Action, n: int = N_OFFSETS) -> SpawnRequest | None:
    if isinstance(action, DiscRel):
        return decode_disc_rel(scene, graph, action, n)
    if isinstance(action, DiscAbs):
        return decode_disc_abs(scene, action.u, action.i, action.j, action.s)
    if isinstance(action, ContRel):
        return decode_cont_rel(scene, action.X, action.x, action.y, action.dx, action.s)
    if isinstance(action, ContAbs):
        return decode_cont_abs(scene, action.X, action.x, action.y, action.s)
    raise TypeError(f"cannot decode {action!r}")
