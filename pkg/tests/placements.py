"""Random placement sequences shared by the physics property tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from blockforge.physics import (
    BLOCK_H,
    BLOCK_WIDTHS,
    COLLIDABLE,
    EPS_CONTACT,
    EPS_LEN,
    Kind,
    Rect,
    Scene,
    SettleStatus,
    SpawnStatus,
    assemblies,
    overlap_area,
    potential_energy,
    settle,
    spawn,
)


@dataclass
class Placement:
    w: float
    x: float
    y: float
    sticky: bool


def draw_sequence(rng: np.random.Generator, length: int) -> list[Placement]:
    return [Placement(float(rng.choice(BLOCK_WIDTHS)), float(rng.uniform(-6.5, 6.5)),
                      float(rng.uniform(0.4, 6.0)), bool(rng.random() < 0.3)) for _ in range(length)]


@dataclass
class SequenceReport:
    final_hash: str
    violations: list[str]


def max_overlap(scene: Scene) -> float:
    solid = [b.rect for b in scene.bodies if b.kind in COLLIDABLE]
    worst = 0.0
    for i in range(len(solid)):
        for j in range(i + 1, len(solid)):
            worst = max(worst, overlap_area(solid[i], solid[j]))
    return worst


def support_sound(scene: Scene) -> bool:
    """Every free assembly's centre of mass lies over its support contacts."""
    by_id = {b.id: b for b in scene.bodies}
    solid = [b for b in scene.bodies if b.kind in COLLIDABLE]
    for asm in assemblies(scene):
        if asm.grounded:
            continue
        members = set(asm.ids)
        rects = [by_id[i].rect for i in asm.ids]
        com = sum(r.area * r.cx for r in rects) / sum(r.area for r in rects)
        lo, hi = np.inf, -np.inf
        for r in rects:
            for o in solid:
                if o.id in members:
                    continue
                q = o.rect
                ov = min(r.right, q.right) - max(r.left, q.left)
                if ov > EPS_LEN and abs(r.bottom - q.top) <= EPS_CONTACT:
                    lo, hi = min(lo, max(r.left, q.left)), max(hi, min(r.right, q.right))
                if abs(q.left - r.right) <= EPS_CONTACT and min(r.top, q.top) - max(r.bottom, q.bottom) > EPS_LEN:
                    lo, hi = min(lo, r.right), max(hi, r.right)
                if abs(r.left - q.right) <= EPS_CONTACT and min(r.top, q.top) - max(r.bottom, q.bottom) > EPS_LEN:
                    lo, hi = min(lo, r.left), max(hi, r.left)
        if not lo - 1e-9 <= com <= hi + 1e-9:
            return False
    return True


def run_sequence(base: Scene, seq: list[Placement], check: bool = True) -> SequenceReport:
    scene = base.copy()
    bad: list[str] = []
    for p in seq:
        status, nxt = spawn(scene, Rect(0.0, 0.0, p.w, BLOCK_H), (p.x, p.y), p.sticky)
        if status is not SpawnStatus.OK:
            continue
        before = potential_energy(nxt)
        out = settle(nxt)
        if out.status is not SettleStatus.SETTLED:
            break
        scene = nxt
        if not check:
            continue
        if potential_energy(scene) > before + 1e-12:
            bad.append("energy increased")
        if max_overlap(scene) > 1e-9:
            bad.append("penetration")
        again = scene.copy()
        out2 = settle(again)
        if out2.moved_ids or again.to_json() != scene.to_json():
            bad.append("second settle moved bodies")
    return SequenceReport(scene.content_hash(), bad)
