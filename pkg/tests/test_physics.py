import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockforge.physics import (
    BLOCK_H,
    EPS_CONTACT,
    FLOOR_ID,
    Kind,
    Rect,
    Scene,
    SettleStatus,
    SpawnStatus,
    assemblies,
    contact_pairs,
    overlap_area,
    potential_energy,
    settle,
    spawn,
)
from placements import draw_sequence, max_overlap, run_sequence, support_sound

SMALL, MEDIUM, LARGE = (Rect(0.0, 0.0, w, BLOCK_H) for w in (0.7, 2.1, 3.5))


def place(scene: Scene, proto: Rect, x: float, y: float, sticky: bool = False) -> Scene:
    status, out = spawn(scene, proto, (x, y), sticky)
    assert status is SpawnStatus.OK
    return out


def last(scene: Scene):
    return scene.bodies[-1]


# -- overlap_area --------------------------------------------------------------


def test_overlap_identical_unit_squares():
    a = Rect(0.0, 0.0, 1.0, 1.0)
    assert overlap_area(a, a) == 1.0


def test_overlap_disjoint():
    assert overlap_area(Rect(0, 0, 1, 1), Rect(3, 0, 1, 1)) == 0.0


def test_overlap_half_shifted_bars():
    # intervals [-1, 1] and [0, 2] share length 1; heights coincide
    assert overlap_area(Rect(0, 0, 2, 1), Rect(1, 0, 2, 1)) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 4), st.floats(0.1, 4),
       st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 4), st.floats(0.1, 4))
def test_overlap_symmetric_and_bounded(x1, y1, w1, h1, x2, y2, w2, h2):
    a, b = Rect(x1, y1, w1, h1), Rect(x2, y2, w2, h2)
    area = overlap_area(a, b)
    assert area == overlap_area(b, a)
    assert 0.0 <= area <= min(a.area, b.area) + 1e-12


# -- spawn ---------------------------------------------------------------------


def test_spawn_on_empty_floor_then_rest():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    out = settle(scene)
    assert out.status is SettleStatus.SETTLED
    assert last(scene).rect.cy == pytest.approx(0.35)


def test_spawn_into_obstacle():
    scene = Scene()
    scene.add(Rect(0.0, 2.0, 2.0, 0.35), Kind.OBSTACLE)
    status, _ = spawn(scene, SMALL, (0.5, 2.0), False)
    assert status is SpawnStatus.OBSTACLE_OVERLAP


def test_spawn_half_overlapping_placed_block_is_bad():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    status, out = spawn(scene, SMALL, (0.35, 0.35), False)
    assert overlap_area(SMALL.at(0.35, 0.35), SMALL.at(0.0, 0.35)) == pytest.approx(0.245)
    assert status is SpawnStatus.BAD_SPAWN
    assert out is scene


def test_spawn_outside_world_is_bad():
    status, _ = spawn(Scene(), LARGE, (7.0, 0.35), False)
    assert status is SpawnStatus.BAD_SPAWN


def test_spawn_does_not_mutate_input():
    scene = Scene()
    before = scene.to_json()
    spawn(scene, SMALL, (0.0, 3.0), True)
    assert scene.to_json() == before


# -- settle --------------------------------------------------------------------


def test_free_fall_to_floor():
    scene = place(Scene(), SMALL, 1.0, 3.0)
    out = settle(scene)
    assert out.status is SettleStatus.SETTLED
    assert last(scene).rect.cy == pytest.approx(0.35)
    assert out.moved_ids == [last(scene).id]


def test_topple_slides_off_single_support():
    # large block resting on a small one with its centre of mass at x=1.5,
    # outside the support [-0.35, 0.35]: slide right until the support is
    # cleared (0.35 - (1.5 - 1.75) + eps = 0.601), then drop to the floor.
    scene = place(Scene(), SMALL, 0.0, 0.35)
    scene = place(scene, LARGE, 1.5, 1.05)
    out = settle(scene)
    rect = last(scene).rect
    assert out.status is SettleStatus.SETTLED
    assert rect.cx == pytest.approx(1.5 + 0.6 + EPS_CONTACT, abs=1e-12)
    assert rect.cy == pytest.approx(0.35)


def test_slide_stops_when_it_reaches_a_second_support():
    # Large block touches only B at first and slides left; after 0.05 + eps
    # it reaches A, and the two supports then hold it.
    scene = place(Scene(), SMALL, -2.45, 0.35)  # A spans [-2.8, -2.1]
    scene = place(scene, SMALL, 1.6, 0.35)  # B spans [1.25, 1.95]
    scene = place(scene, LARGE, -0.3, 1.05)  # spans [-2.05, 1.45]
    out = settle(scene)
    rect = last(scene).rect
    assert out.status is SettleStatus.SETTLED
    assert rect.cx == pytest.approx(-0.3 - 0.05 - EPS_CONTACT, abs=1e-12)
    assert rect.cy == pytest.approx(1.05)
    assert settle(scene).moved_ids == []


def test_landing_on_obstacle_is_reported():
    scene = Scene()
    scene.add(Rect(0.0, 1.0, 2.0, 0.35), Kind.OBSTACLE)
    scene = place(scene, SMALL, 0.0, 3.0)
    assert settle(scene).status is SettleStatus.OBSTACLE_HIT


def test_sticky_overhang_is_held_by_bond():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    scene = place(scene, SMALL, 0.6, 1.05, sticky=True)
    out = settle(scene)
    assert out.status is SettleStatus.SETTLED
    assert last(scene).rect.cx == 0.6
    assert scene.bonds


def test_iteration_cap_reports_unsettled():
    scene = place(Scene(), SMALL, 0.0, 5.0)
    assert settle(scene, max_iters=0).status is SettleStatus.UNSETTLED


def test_block_falling_off_world_edge_is_unsettled():
    # the floor spans the world; a block outside its footprint has nothing below
    scene = Scene()
    scene.add(Rect(9.0, 3.0, 0.7, 0.7), Kind.PLACED)
    assert settle(scene).status is SettleStatus.UNSETTLED


# -- contacts and assemblies -------------------------------------------------------


def test_contacts_single_block():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    assert contact_pairs(scene) == {(FLOOR_ID, last(scene).id)}


def test_contacts_stack():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    lower = last(scene).id
    scene = place(scene, SMALL, 0.0, 1.05)
    upper = last(scene).id
    assert contact_pairs(scene) == {(FLOOR_ID, lower), (lower, upper)}


def test_no_contact_across_offset_gap():
    scene = place(Scene(), SMALL, 0.0, 0.35)
    scene = place(scene, SMALL, 0.74, 0.35)
    pairs = contact_pairs(scene)
    assert (1, 2) not in pairs and len(pairs) == 2


def test_assemblies_without_sticky():
    scene = place(Scene(), SMALL, -1.0, 0.35)
    scene = place(scene, SMALL, 1.0, 0.35)
    assert [a.ids for a in assemblies(scene)] == [(1,), (2,)]


def test_sticky_block_joins_its_neighbours():
    scene = place(Scene(), SMALL, -0.7, 0.35)
    scene = place(scene, SMALL, 0.7, 0.35)
    scene = place(scene, MEDIUM, 0.0, 1.05, sticky=True)
    settle(scene)
    groups = assemblies(scene)
    assert len(groups) == 1 and set(groups[0].ids) == {1, 2, 3}


def test_sticky_on_floor_is_grounded():
    scene = place(Scene(), SMALL, 0.0, 0.35, sticky=True)
    settle(scene)
    assert assemblies(scene)[0].grounded


# -- serialization -----------------------------------------------------------------


def test_scene_json_round_trip_is_exact():
    scene = place(Scene(), SMALL, 0.1 + 0.2, 0.35, sticky=True)
    settle(scene)
    again = Scene.from_json(scene.to_json())
    assert again.to_json() == scene.to_json()
    assert again.content_hash() == scene.content_hash()
    assert len(scene.content_hash()) == 16


# -- properties --------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_random_sequences_keep_invariants(seed, length):
    seq = draw_sequence(np.random.default_rng(seed), length)
    report = run_sequence(Scene(), seq)
    assert report.violations == []
    assert run_sequence(Scene(), seq, check=False).final_hash == report.final_hash


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_settled_scenes_are_supported(seed, length):
    scene = Scene()
    for p in draw_sequence(np.random.default_rng(seed), length):
        status, nxt = spawn(scene, Rect(0, 0, p.w, BLOCK_H), (p.x, p.y), p.sticky)
        if status is SpawnStatus.OK and settle(nxt).status is SettleStatus.SETTLED:
            scene = nxt
    assert support_sound(scene)
    assert max_overlap(scene) <= 1e-9


@given(st.floats(-6, 6), st.floats(0.5, 10))
def test_settle_never_raises_energy(x, y):
    scene = place(Scene(), SMALL, 0.0, 0.35)
    status, nxt = spawn(scene, MEDIUM, (x, y), False)
    if status is SpawnStatus.OK:
        before = potential_energy(nxt)
        settle(nxt)
        assert potential_energy(nxt) <= before + 1e-12
        assert math.isfinite(potential_energy(nxt))
