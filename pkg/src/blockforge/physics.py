"""Quasi-static stacking physics for axis-aligned rectangular blocks.

Blocks never rotate. A placed block (or a group of blocks glued together by
sticky bonds) drops straight down onto the highest surface under its
footprint. A resting group whose centre of mass lies outside the horizontal
extent of its supports slides off the offending support and keeps falling.
Obstacles and the floor never move; touching an obstacle is reported so the
episode layer can end the episode.

World frame: x in [-8, 8], y in [0, 16], floor top at y = 0.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

WORLD_W = 16.0
WORLD_H = 16.0
HALF_W = WORLD_W / 2.0
FLOOR_ID = 0
FLOOR_TOP = 0.0
FLOOR_THICKNESS = 0.1

BLOCK_H = 0.7
BLOCK_WIDTHS = (0.7, 2.1, 3.5)

EPS_CONTACT = 1e-3  # touching tolerance (m)
EPS_GEOM = 1e-9  # overlap-area tolerance (m^2)
EPS_LEN = 1e-9  # overlap length below which two faces do not support each other

MAX_SETTLE_ITERS = 1000


@dataclass(frozen=True)
class Rect:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"rect needs positive size, got {self.w}x{self.h}")

    @property
    def left(self) -> float:
        return self.cx - self.w / 2

    @property
    def right(self) -> float:
        return self.cx + self.w / 2

    @property
    def bottom(self) -> float:
        return self.cy - self.h / 2

    @property
    def top(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def moved(self, dx: float = 0.0, dy: float = 0.0) -> "Rect":
        return Rect(self.cx + dx, self.cy + dy, self.w, self.h)

    def at(self, cx: float, cy: float) -> "Rect":
        return Rect(cx, cy, self.w, self.h)


class Kind(str, enum.Enum):
    AVAILABLE = "available"
    PLACED = "placed"
    OBSTACLE = "obstacle"
    TARGET_BLOCK = "target_block"
    TARGET_POINT = "target_point"
    FLOOR = "floor"


COLLIDABLE = frozenset({Kind.PLACED, Kind.OBSTACLE, Kind.FLOOR})
STATIC = frozenset({Kind.OBSTACLE, Kind.FLOOR})
TARGETS = frozenset({Kind.TARGET_BLOCK, Kind.TARGET_POINT})


@dataclass(frozen=True)
class Body:
    id: int
    rect: Rect
    kind: Kind
    sticky: bool = False

    def __post_init__(self):
        if self.sticky and self.kind is not Kind.PLACED:
            raise ValueError("only placed blocks can be sticky")


def floor_body() -> Body:
    return Body(FLOOR_ID, Rect(0.0, FLOOR_TOP - FLOOR_THICKNESS / 2, WORLD_W, FLOOR_THICKNESS), Kind.FLOOR)


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class Scene:
    """Mutable world state. Body order is insertion order (placement order)."""

    bodies: list[Body] = field(default_factory=lambda: [floor_body()])
    bonds: set[tuple[int, int]] = field(default_factory=set)
    next_id: int = 1

    def copy(self) -> "Scene":
        return Scene(list(self.bodies), set(self.bonds), self.next_id)

    def add(self, rect: Rect, kind: Kind, sticky: bool = False) -> Body:
        body = Body(self.next_id, rect, kind, sticky)
        self.bodies.append(body)
        self.next_id += 1
        return body

    def get(self, body_id: int) -> Body:
        for b in self.bodies:
            if b.id == body_id:
                return b
        raise KeyError(body_id)

    def remove(self, body_id: int) -> None:
        self.bodies = [b for b in self.bodies if b.id != body_id]
        self.bonds = {p for p in self.bonds if body_id not in p}

    def of_kind(self, *kinds: Kind) -> list[Body]:
        return [b for b in self.bodies if b.kind in kinds]

    @property
    def placed(self) -> list[Body]:
        return self.of_kind(Kind.PLACED)

    @property
    def obstacles(self) -> list[Body]:
        return self.of_kind(Kind.OBSTACLE)

    @property
    def targets(self) -> list[Body]:
        return self.of_kind(Kind.TARGET_BLOCK, Kind.TARGET_POINT)

    @property
    def available(self) -> list[Body]:
        return self.of_kind(Kind.AVAILABLE)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "world": {"w": WORLD_W, "h": WORLD_H},
            "bodies": [
                {
                    "id": b.id,
                    "kind": b.kind.value,
                    "cx": b.rect.cx,
                    "cy": b.rect.cy,
                    "w": b.rect.w,
                    "h": b.rect.h,
                    "sticky": b.sticky,
                }
                for b in self.bodies
            ],
            "bonds": [list(p) for p in sorted(self.bonds)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        world = d.get("world", {})
        if (world.get("w", WORLD_W), world.get("h", WORLD_H)) != (WORLD_W, WORLD_H):
            raise ValueError(f"unsupported world extent {world}")
        bodies = [
            Body(int(b["id"]), Rect(float(b["cx"]), float(b["cy"]), float(b["w"]), float(b["h"])),
                 Kind(b["kind"]), bool(b.get("sticky", False)))
            for b in d["bodies"]
        ]
        bonds = {_pair(int(i), int(j)) for i, j in d.get("bonds", [])}
        next_id = max((b.id for b in bodies), default=0) + 1
        return cls(bodies, bonds, next_id)

    def to_json(self) -> str:
        # repr-based float text round-trips 64-bit values exactly
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))

    def content_hash(self) -> str:
        """64-bit content hash of the serialized scene, as 16 hex digits."""
        return hashlib.blake2b(self.to_json().encode(), digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# geometry


def overlap_length(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def overlap_area(a: Rect, b: Rect) -> float:
    return overlap_length(a.left, a.right, b.left, b.right) * overlap_length(a.bottom, a.top, b.bottom, b.top)


def rect_distance(a: Rect, b: Rect) -> float:
    """Euclidean gap between two rectangles (0 if they touch or overlap)."""
    dx = max(0.0, max(a.left, b.left) - min(a.right, b.right))
    dy = max(0.0, max(a.bottom, b.bottom) - min(a.top, b.top))
    return math.hypot(dx, dy)


def in_world(r: Rect) -> bool:
    return (r.left >= -HALF_W - EPS_LEN and r.right <= HALF_W + EPS_LEN
            and r.bottom >= FLOOR_TOP - EPS_LEN and r.top <= WORLD_H + EPS_LEN)


def potential_energy(scene: Scene) -> float:
    """Sum of area * height over placed blocks (uniform density)."""
    return sum(b.rect.area * b.rect.cy for b in scene.bodies if b.kind is Kind.PLACED)


def drop_height(scene: Scene, rect: Rect, ignore: Iterable[int] = ()) -> float | None:
    """Centre height at which ``rect`` comes to rest if dropped straight down.

    Only the vertical projection is considered (no toppling); returns None if
    nothing lies under the footprint.
    """
    skip = set(ignore)
    best = None
    for o in scene.bodies:
        if o.kind not in COLLIDABLE or o.id in skip:
            continue
        r = o.rect
        if overlap_length(rect.left, rect.right, r.left, r.right) <= EPS_LEN:
            continue
        if r.top <= rect.bottom + EPS_LEN and (best is None or r.top > best):
            best = r.top
    return None if best is None else best + rect.h / 2


# ---------------------------------------------------------------------------
# union-find over bonds


class UnionFind:
    def __init__(self, items: Iterable[int] = ()):
        self.parent = {i: i for i in items}

    def find(self, a: int) -> int:
        parent = self.parent
        parent.setdefault(a, a)
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes root so groupings are order-independent
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for item in sorted(self.parent):
            out.setdefault(self.find(item), []).append(item)
        return out


@dataclass(frozen=True)
class Assembly:
    ids: tuple[int, ...]
    grounded: bool


def assemblies(scene: Scene) -> list[Assembly]:
    """Partition placed blocks into rigid assemblies joined by sticky bonds."""
    placed = [b.id for b in scene.bodies if b.kind is Kind.PLACED]
    uf = UnionFind(placed + [FLOOR_ID])
    for i, j in sorted(scene.bonds):
        uf.union(i, j)
    out = []
    for members in uf.groups().values():
        grounded = FLOOR_ID in members
        ids = tuple(m for m in members if m != FLOOR_ID)
        if ids:
            out.append(Assembly(ids, grounded))
    return sorted(out, key=lambda a: a.ids[0])


# ---------------------------------------------------------------------------
# contacts


def contact_pairs(scene: Scene) -> set[tuple[int, int]]:
    """Pairs of collidable bodies within EPS_CONTACT of each other.

    Static-static pairs (obstacle/floor against each other) are left out; at
    least one body of every pair is a placed block.
    """
    solid = [b for b in scene.bodies if b.kind in COLLIDABLE]
    if len(solid) < 2:
        return set()
    cx = np.array([b.rect.cx for b in solid])
    cy = np.array([b.rect.cy for b in solid])
    w = np.array([b.rect.w for b in solid])
    h = np.array([b.rect.h for b in solid])
    L, R, B, T = cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
    dx = np.maximum(0.0, np.maximum.outer(L, L) - np.minimum.outer(R, R))
    dy = np.maximum(0.0, np.maximum.outer(B, B) - np.minimum.outer(T, T))
    static = np.array([b.kind in STATIC for b in solid])
    near = (np.hypot(dx, dy) <= EPS_CONTACT) & ~(static[:, None] & static[None, :])
    ids = [b.id for b in solid]
    return {_pair(ids[i], ids[j]) for i, j in zip(*np.nonzero(np.triu(near, 1)))}


# ---------------------------------------------------------------------------
# spawning


class SpawnStatus(enum.Enum):
    OK = "ok"
    BAD_SPAWN = "bad_spawn"
    OBSTACLE_OVERLAP = "obstacle_overlap"


def spawn(scene: Scene, proto: Rect, at: tuple[float, float], sticky: bool) -> tuple[SpawnStatus, Scene]:
    """Place a copy of ``proto`` centred at ``at``; the input scene is untouched.

    The new block is not settled. Obstacle overlap takes precedence over
    overlap with placed blocks because it ends the episode with zero return.
    """
    rect = proto.at(float(at[0]), float(at[1]))
    if not in_world(rect):
        return SpawnStatus.BAD_SPAWN, scene
    for b in scene.bodies:
        if b.kind is Kind.OBSTACLE and overlap_area(rect, b.rect) > EPS_GEOM:
            return SpawnStatus.OBSTACLE_OVERLAP, scene
    for b in scene.bodies:
        if b.kind in (Kind.PLACED, Kind.FLOOR) and overlap_area(rect, b.rect) > EPS_GEOM:
            return SpawnStatus.BAD_SPAWN, scene
    out = scene.copy()
    out.add(rect, Kind.PLACED, sticky)
    return SpawnStatus.OK, out


# ---------------------------------------------------------------------------
# settling


class SettleStatus(enum.Enum):
    SETTLED = "settled"
    OBSTACLE_HIT = "obstacle_hit"
    UNSETTLED = "unsettled"


@dataclass
class SettleOutcome:
    status: SettleStatus
    moved_ids: list[int]
    contacts: set[tuple[int, int]]


class _Solver:
    """Array view of the collidable geometry while a scene settles.

    Rows follow scene order. Pairwise overlaps are recomputed once per
    iteration; everything else is cheap scalar work on the results.
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        solid = [b for b in scene.bodies if b.kind in COLLIDABLE]
        self.ids = [b.id for b in solid]
        self.row = {b.id: k for k, b in enumerate(solid)}
        self.cx = np.array([b.rect.cx for b in solid])
        self.cy = np.array([b.rect.cy for b in solid])
        self.w = np.array([b.rect.w for b in solid])
        self.h = np.array([b.rect.h for b in solid])
        self.movable = np.array([b.kind is Kind.PLACED for b in solid])
        self.obstacle = np.array([b.kind is Kind.OBSTACLE for b in solid])
        self.sticky = np.array([b.sticky for b in solid])
        self.mov_rows = np.flatnonzero(self.movable)
        self.bonds = set(scene.bonds)
        self._groups = None
        self.moved_rows: set[int] = set()

    def geometry(self) -> None:
        self.L = self.cx - self.w / 2
        self.R = self.cx + self.w / 2
        self.B = self.cy - self.h / 2
        self.T = self.cy + self.h / 2
        m = self.mov_rows
        self.hov = np.minimum.outer(self.R[m], self.R) - np.maximum.outer(self.L[m], self.L)
        self.vov = np.minimum.outer(self.T[m], self.T) - np.maximum.outer(self.B[m], self.B)
        self.dist = np.hypot(np.maximum(0.0, -self.hov), np.maximum(0.0, -self.vov))

    def form_bonds(self) -> None:
        m = self.mov_rows
        cand = (self.dist <= EPS_CONTACT) & ~self.obstacle[None, :]
        cand &= self.sticky[m][:, None] | self.sticky[None, :]
        cand[np.arange(len(m)), m] = False
        for a, j in zip(*np.nonzero(cand)):
            pair = _pair(self.ids[m[a]], self.ids[j])
            if pair not in self.bonds:
                self.bonds.add(pair)
                self._groups = None

    def obstacle_contact(self) -> bool:
        return bool(np.any((self.dist <= EPS_CONTACT) & self.obstacle[None, :]))

    def groups(self) -> list[tuple[list[int], bool]]:
        """Movable rows grouped by bonds, each flagged grounded or not."""
        if self._groups is None:
            uf = UnionFind([self.ids[r] for r in self.mov_rows] + [FLOOR_ID])
            for i, j in sorted(self.bonds):
                uf.union(i, j)
            out = []
            for members in uf.groups().values():
                rows = [self.row[i] for i in members if i != FLOOR_ID]
                if rows:
                    out.append((rows, FLOOR_ID in members))
            self._groups = out
            label = np.arange(len(self.ids)) + len(self.ids)  # statics: unique labels
            for g, (rows, _) in enumerate(out):
                label[rows] = g
            self.label = label
        bottoms = self.B
        return sorted(self._groups, key=lambda g: (min(bottoms[r] for r in g[0]), self.ids[g[0][0]]))

    def row_stats(self) -> None:
        """Per movable row: drop gap, support-contact hull and side faces."""
        m = self.mov_rows
        lab = self.label
        foreign = lab[None, :] != lab[m][:, None]
        Bm, Lm, Rm = self.B[m][:, None], self.L[m][:, None], self.R[m][:, None]
        T, L, R = self.T[None, :], self.L[None, :], self.R[None, :]
        hov_ok = self.hov > EPS_LEN
        under = hov_ok & (T <= Bm + EPS_LEN) & foreign
        self.gap = np.where(under, np.maximum(0.0, Bm - T), np.inf).min(axis=1).tolist()
        below = hov_ok & (np.abs(Bm - T) <= EPS_CONTACT) & foreign
        lo = np.where(below, np.maximum(Lm, L), np.inf).min(axis=1)
        hi = np.where(below, np.minimum(Rm, R), -np.inf).max(axis=1)
        side = (self.vov > EPS_LEN) & ~below & foreign
        right = (side & (L - Rm + EPS_LEN >= 0.0) & (L - Rm + EPS_LEN <= EPS_CONTACT + EPS_LEN)).any(axis=1)
        left = (side & (Lm - R + EPS_LEN >= 0.0) & (Lm - R + EPS_LEN <= EPS_CONTACT + EPS_LEN)).any(axis=1)
        lo = np.minimum(lo, np.where(left, self.L[m], np.inf))
        hi = np.maximum(hi, np.where(right, self.R[m], -np.inf))
        lo = np.minimum(lo, np.where(right, self.R[m], np.inf))
        hi = np.maximum(hi, np.where(left, self.L[m], -np.inf))
        self.hull_lo, self.hull_hi = lo.tolist(), hi.tolist()
        self.mrow = {int(r): k for k, r in enumerate(m)}

    def group_drop(self, rows: list[int]) -> float | None:
        d = min(self.gap[self.mrow[r]] for r in rows)
        return None if d == math.inf else d

    def group_hull(self, rows: list[int]) -> tuple[float, float]:
        return (min(self.hull_lo[self.mrow[r]] for r in rows), max(self.hull_hi[self.mrow[r]] for r in rows))

    def _foreign(self, rows: list[int]) -> np.ndarray:
        """(len(rows), n) mask of bodies outside the group of each row."""
        lab = self.label
        return lab[None, :] != lab[rows][:, None]

    def _mrows(self, rows: list[int]) -> np.ndarray:
        return np.searchsorted(self.mov_rows, rows)

    def drop_distance(self, rows: list[int]) -> float | None:
        a = self._mrows(rows)
        under = (self.hov[a] > EPS_LEN) & (self.T[None, :] <= self.B[rows][:, None] + EPS_LEN) & self._foreign(rows)
        if not under.any():
            return None
        gaps = np.maximum(0.0, self.B[rows][:, None] - self.T[None, :])
        return float(gaps[under].min())

    def support(self, rows: list[int]):
        """Below-support contacts (lo, hi, member row, supporter row) and side faces."""
        a = self._mrows(rows)
        foreign = self._foreign(rows)
        hov, vov = self.hov[a], self.vov[a]
        below_m = (hov > EPS_LEN) & (np.abs(self.B[rows][:, None] - self.T[None, :]) <= EPS_CONTACT) & foreign
        below = []
        for k, j in zip(*np.nonzero(below_m)):
            m = rows[k]
            below.append((max(self.L[m], self.L[j]), min(self.R[m], self.R[j]), m, j))
        side = (vov > EPS_LEN) & ~below_m & foreign
        faces = []
        for k, j in zip(*np.nonzero(side)):
            m = rows[k]
            if 0.0 <= self.L[j] - self.R[m] + EPS_LEN <= EPS_CONTACT + EPS_LEN:
                faces.append(float(self.R[m]))
            elif 0.0 <= self.L[m] - self.R[j] + EPS_LEN <= EPS_CONTACT + EPS_LEN:
                faces.append(float(self.L[m]))
        return below, faces

    def com_x(self, rows: list[int]) -> float:
        area = self.w[rows] * self.h[rows]
        return float((area * self.cx[rows]).sum() / area.sum())

    def sweep_limit(self, rows: list[int], direction: int, dist: float) -> float:
        a = self._mrows(rows)
        blocking = (self.vov[a] > EPS_LEN) & self._foreign(rows)
        Rm, Lm = self.R[rows][:, None], self.L[rows][:, None]
        if direction > 0:
            ahead = blocking & (self.L[None, :] >= Rm - EPS_LEN)
            gaps = np.maximum(0.0, self.L[None, :] - Rm)
        else:
            ahead = blocking & (self.R[None, :] <= Lm + EPS_LEN)
            gaps = np.maximum(0.0, Lm - self.R[None, :])
        if ahead.any():
            dist = min(dist, float(gaps[ahead].min()))
        return dist

    def engage_limit(self, rows: list[int], direction: int, dist: float) -> float:
        """Shorten a slide so it stops once a member gains a new supporter ahead."""
        a = self._mrows(rows)
        level = np.abs(self.B[rows][:, None] - self.T[None, :]) <= EPS_CONTACT
        free = level & (self.hov[a] <= EPS_LEN) & self._foreign(rows)
        Rm, Lm = self.R[rows][:, None], self.L[rows][:, None]
        if direction > 0:
            ahead = free & (self.L[None, :] >= Rm - EPS_LEN)
            reach = self.L[None, :] - Rm
        else:
            ahead = free & (self.R[None, :] <= Lm + EPS_LEN)
            reach = Lm - self.R[None, :]
        if ahead.any():
            dist = min(dist, max(0.0, float(reach[ahead].min())) + EPS_CONTACT)
        return dist

    def move(self, rows: list[int], dx: float, dy: float) -> None:
        for r in rows:
            self.cx[r] = self.cx[r] + dx
            self.cy[r] = self.cy[r] + dy
        self.moved_rows.update(rows)

    def writeback(self) -> None:
        rects = {}
        for r in self.moved_rows:
            rects[self.ids[r]] = Rect(float(self.cx[r]), float(self.cy[r]), float(self.w[r]), float(self.h[r]))
        self.scene.bodies = [replace(b, rect=rects[b.id]) if b.id in rects else b for b in self.scene.bodies]
        self.scene.bonds = self.bonds


def settle(scene: Scene, max_iters: int = MAX_SETTLE_ITERS) -> SettleOutcome:
    """Resolve falling and toppling in place until every assembly rests.

    Each iteration bonds sticky contacts, checks for obstacle contact, then
    moves the lowest assembly that is unsupported (drop) or unstable (slide).
    """
    solver = _Solver(scene)
    status = SettleStatus.UNSETTLED
    if len(solver.mov_rows) == 0:
        status = SettleStatus.SETTLED
        max_iters = 0
    seen: set[bytes] = set()
    for _ in range(max_iters):
        key = solver.cx.tobytes() + solver.cy.tobytes() + len(solver.bonds).to_bytes(4, "little")
        if key in seen:
            # revisited a configuration: the slides are cycling
            break
        seen.add(key)
        solver.geometry()
        solver.form_bonds()
        if solver.obstacle_contact():
            status = SettleStatus.OBSTACLE_HIT
            break
        acted = False
        jammed = False
        groups = solver.groups()
        solver.row_stats()
        for group, grounded in groups:
            if grounded:
                continue
            d = solver.group_drop(group)
            if d is None:
                # fell past the edge of the floor
                jammed = True
                break
            if d > EPS_LEN:
                solver.move(group, 0.0, -d)
                acted = True
                break
            com = solver.com_x(group)
            lo, hi = solver.group_hull(group)
            if lo <= com <= hi:
                continue
            below, _ = solver.support(group)
            direction = 1 if com > hi else -1
            edge = max(h for _, h, _, _ in below) if direction > 0 else min(l for l, _, _, _ in below)
            dist = 0.0
            for l_, h_, m, j in below:
                if direction > 0 and h_ == edge:
                    dist = max(dist, float(solver.R[j] - solver.L[m]) + EPS_CONTACT)
                elif direction < 0 and l_ == edge:
                    dist = max(dist, float(solver.R[m] - solver.L[j]) + EPS_CONTACT)
            dist = solver.sweep_limit(group, direction, solver.engage_limit(group, direction, dist))
            if dist <= EPS_LEN:
                jammed = True
                break
            solver.move(group, direction * dist, 0.0)
            acted = True
            break
        if jammed:
            status = SettleStatus.UNSETTLED
            break
        if not acted:
            status = SettleStatus.SETTLED
            break
    solver.writeback()
    moved = sorted(solver.ids[r] for r in solver.moved_rows)
    return SettleOutcome(status, moved, contact_pairs(scene))


def is_at_rest(scene: Scene) -> bool:
    """True if settling would move nothing (used by property checks)."""
    probe = scene.copy()
    out = settle(probe)
    return out.status is SettleStatus.SETTLED and not out.moved_ids
