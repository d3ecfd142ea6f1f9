import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockforge import actions as A
from blockforge.obsgraph import build_graph
from blockforge.physics import FLOOR_ID, HALF_W, Kind, Rect, Scene
from blockforge.scenegen import TaskId, base_scene, generate


def scene_with_large_reference() -> Scene:
    scene = Scene()
    scene.add(Rect(-5.0, -1.0, 0.7, 0.7), Kind.AVAILABLE)  # id 1
    scene.add(Rect(1.0, 0.35, 3.5, 0.7), Kind.PLACED)  # id 2
    return scene


# -- closed-form placements ----------------------------------------------------------


def test_cont_rel_x_formula():
    scene = scene_with_large_reference()
    # point the query at the placed block; X picks the only available block
    req = A.decode_cont_rel(scene, -5.0 / HALF_W, 1.0 / HALF_W, 0.35 / HALF_W - 1, 0.5, 1.0, floor_proxy="never")
    assert req.x == pytest.approx(1.0 + 0.5 * (2.1 + 0.04), abs=1e-9)
    assert req.x == pytest.approx(2.07, abs=1e-9)


def test_cont_rel_y_above_solid_reference():
    scene = Scene()
    scene.add(Rect(-5.0, -1.0, 0.7, 0.7), Kind.AVAILABLE)
    scene.add(Rect(0.0, 0.35, 0.7, 0.7), Kind.PLACED)
    req = A.decode_cont_rel(scene, -5.0 / HALF_W, 0.0, 0.35 / HALF_W - 1, 0.0, 1.0, floor_proxy="never")
    assert req.y == pytest.approx(1.09, abs=1e-9)
    assert req.x == 0.0


def test_cont_rel_target_reference_overlaps_vertically():
    scene = Scene()
    scene.add(Rect(-5.0, -1.0, 0.7, 0.7), Kind.AVAILABLE)
    scene.add(Rect(2.0, 3.0, 2.1, 0.7), Kind.TARGET_BLOCK)
    req = A.decode_cont_rel(scene, -5.0 / HALF_W, 2.0 / HALF_W, 3.0 / HALF_W - 1, 0.0, -1.0)
    assert (req.x, req.y) == (2.0, pytest.approx(3.04, abs=1e-12))


def test_offset_grid_endpoints_and_middle():
    values = A.offset_grid(15, 2.1, 0.7)
    assert len(values) == 15
    assert values[0] == pytest.approx(-1.4 * 13 / 12, abs=1e-9)
    assert values[-1] == pytest.approx(1.516666666667, abs=1e-9)
    assert values[7] == 0.0
    assert np.allclose(np.diff(values), values[1] - values[0], atol=1e-12)


@given(st.integers(4, 64), st.sampled_from([0.7, 2.1, 3.5]), st.sampled_from([0.7, 2.1, 3.5, 0.2, 16.0]))
def test_offset_grid_is_exactly_symmetric(n, w_c, w_r):
    values = A.offset_grid(n, w_r, w_c)
    assert len(values) == n
    assert np.array_equal(values, -values[::-1])


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_offset_grid_rejects_small_n(n):
    with pytest.raises(ValueError):
        A.offset_grid(n, 0.7, 0.7)


def test_disc_abs_cells():
    x0, y0 = A.disc_abs_cell(0, 0, (8, 64))
    x1, _ = A.disc_abs_cell(0, 1, (8, 64))
    assert x1 - x0 == pytest.approx(0.25)
    assert (x0, y0) == (pytest.approx(-8 + 0.125), pytest.approx(1.0))
    xs = {A.disc_abs_cell(i, j, (256, 256)) for i in range(0, 256, 17) for j in range(256)}
    assert len(xs) == 16 * 256
    with pytest.raises(ValueError):
        A.decode_disc_abs(base_scene(), 0, 8, 0, 1)


def test_disc_abs_exhausted_slot_decodes_to_none():
    scene = base_scene()
    scene.remove(1)
    assert A.decode_disc_abs(scene, 0, 0, 0, 1) is None
    assert A.decode_disc_abs(scene, 1, 0, 0, 1).source_id == 2


# -- snapping and stickiness ----------------------------------------------------------


def test_cont_abs_snaps_to_block_under_x():
    scene = base_scene()
    for b in scene.available:
        assert A.decode_cont_abs(scene, b.rect.cx / HALF_W, 0, 0, 1).source_id == b.id


def test_cont_abs_tie_goes_to_lower_id():
    scene = base_scene()
    a, b = scene.available[2], scene.available[3]
    mid = (a.rect.cx + b.rect.cx) / 2
    # the midpoint must be exactly equidistant for the tie to be real
    assert abs(a.rect.cx - mid) == abs(b.rect.cx - mid)
    assert A.decode_cont_abs(scene, mid / HALF_W, 0, 0, 1).source_id == min(a.id, b.id)


def test_negative_s_is_not_sticky():
    scene = base_scene()
    assert not A.decode_cont_abs(scene, 0.0, 0.0, 0.0, -0.1).sticky
    assert A.decode_cont_abs(scene, 0.0, 0.0, 0.0, 1e-9).sticky
    assert not A.decode_cont_abs(scene, 0.0, 0.0, 0.0, 0.0).sticky


# -- discrete relative ------------------------------------------------------------------


def test_disc_rel_middle_centres_on_reference():
    scene = scene_with_large_reference()
    g = build_graph(scene, floor_proxy="never")
    req = A.decode_disc_rel(scene, g, A.DiscRel(1, 2, 7, -1))
    assert (req.x, req.y) == (1.0, pytest.approx(0.35 + 0.7 + 0.04))
    assert not req.sticky


def test_disc_rel_endpoint_overhangs():
    scene = scene_with_large_reference()
    g = build_graph(scene, floor_proxy="never")
    req = A.decode_disc_rel(scene, g, A.DiscRel(1, 2, 14, 1))
    reach = (3.5 + 0.7) / 2 * (1 + 1 / 12)
    assert req.x == pytest.approx(1.0 + reach, abs=1e-12)
    # block's far edge sits beyond the reference edge by more than its own width
    assert req.x - 0.35 > 1.0 + 1.75


def test_disc_rel_wrong_edge():
    scene = scene_with_large_reference()
    scene.add(Rect(-2.0, 0.35, 0.7, 0.7), Kind.PLACED)
    g = build_graph(scene)
    assert A.decode_disc_rel(scene, g, A.DiscRel(2, 3, 7, 1)) is None
    assert A.decode_disc_rel(scene, g, A.DiscRel(1, 2, 7, 1)) is not None


def test_floor_proxy_reference():
    scene = base_scene()
    g = build_graph(scene)
    req = A.decode_disc_rel(scene, g, A.DiscRel(1, FLOOR_ID, 7, -1))
    assert req.x == 0.0 and req.y == pytest.approx(0.35 + 0.04)


def test_relative_y_variant_shifts_vertically():
    scene = scene_with_large_reference()
    g = build_graph(scene, floor_proxy="never")
    base = A.decode_disc_rel(scene, g, A.DiscRel(1, 2, 7, 1))
    top = A.decode_disc_rel(scene, g, A.DiscRel(1, 2, 7, 1, j=14))
    assert top.y - base.y == pytest.approx(A.offset_grid(15, 0.7, 0.7)[14])


def test_enumeration_counts():
    scene = base_scene()
    for x in (-4.0, 0.0, 4.0):
        scene.add(Rect(x, 0.35, 0.7, 0.7), Kind.TARGET_BLOCK)
    acts = A.enumerate_disc_rel(build_graph(scene))
    assert len(acts) == 630 and len(set(acts)) == 630
    empty = Scene()
    empty.add(Rect(0, 0.35, 0.7, 0.7), Kind.TARGET_BLOCK)
    assert A.enumerate_disc_rel(build_graph(empty)) == []


@pytest.mark.parametrize("task", list(TaskId))
def test_hardest_action_count_is_block_reference_product(task):
    from blockforge.scenegen import MAX_LEVEL
    for k in range(5):
        scene = generate(task, MAX_LEVEL[task], 0, k).scene
        acts = A.enumerate_disc_rel(build_graph(scene))
        assert len(acts) == len(scene.available) * len(A.references(scene)) * 2 * A.N_OFFSETS


def test_flat_index_layout():
    g = build_graph(scene_with_large_reference())
    acts = A.enumerate_disc_rel(g)
    for flat, act in enumerate(acts):
        e, rest = divmod(flat, 30)
        assert rest == 2 * act.i + (act.s > 0)
        assert g.edge_ids(A.q_index(g, flat)[0]) == (act.sender, act.receiver)


# -- properties -------------------------------------------------------------------------


@given(st.sampled_from(list(TaskId)), st.integers(0, 500), st.data())
def test_cross_parameterization_consistency(task, seed, data):
    scene = generate(task, 1, seed, 0).scene
    g = build_graph(scene)
    refs = A.references(scene)
    ref = data.draw(st.sampled_from(refs))
    avail = scene.available
    block = data.draw(st.sampled_from(avail))
    # query point at the reference centre; X at the block, unique by construction
    if sum(1 for b in avail if b.rect.cx == block.rect.cx) > 1:
        return
    x = ref.rect.cx / HALF_W
    y = ref.rect.cy / HALF_W - 1
    cont = A.decode_cont_rel(scene, block.rect.cx / HALF_W, x, y, 0.0, 1.0)
    if cont.source_id != block.id:
        return
    nearest = min(refs, key=lambda b: ((b.rect.cx - ref.rect.cx) ** 2 + (b.rect.cy - ref.rect.cy) ** 2, b.id))
    disc = A.decode_disc_rel(scene, g, A.DiscRel(block.id, nearest.id, A.N_OFFSETS // 2, 1))
    assert (cont.x, cont.y) == (disc.x, disc.y)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_continuous_decoders_are_total_and_deterministic(X, x, y, dx, s):
    scene = generate("silhouette", 3, 0, 0).scene
    a = A.decode_cont_rel(scene, X, x, y, dx, s)
    assert a == A.decode_cont_rel(scene, X, x, y, dx, s)
    assert A.decode_cont_abs(scene, X, x, y, s) is not None


@given(st.sampled_from([A.ContAbs(0.1, 0.2, 0.3, -1.0), A.ContRel(0.1, 0.2, 0.3, 0.4, 1.0),
                        A.DiscAbs(3, 1, 2, 1), A.DiscRel(1, 9, 4, -1), A.DiscRel(1, 9, 4, -1, j=2), A.Resign()]))
def test_action_json_round_trip(action):
    assert A.action_from_dict(json.loads(json.dumps(A.action_to_dict(action)))) == action
