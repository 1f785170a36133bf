"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import numpy as np
import pytest

from atomnav.errors import AmbiguousFrame, EmptyScene, ParseError
from atomnav.geometry import OrientedBox3, PointCloud3, Rigid2
from atomnav.render import (CONVEX, REFLEX, AtomRender, RenderConfig, _outer_border, classify_vertices,
                            extract_polygon, find_frontiers, project_structures, render, sign_frame)
from atomnav.scenemodel import AtomMap, SignInstance, StructureInstance

SPACING = 0.05


def _region(rects):
    """Ground points on a 5 cm lattice covering a union of axis-aligned rectangles."""
    xs = np.arange(-12 + SPACING / 2, 12, SPACING)
    gx, gy = np.meshgrid(xs, xs)
    inside = np.zeros(gx.shape, dtype=bool)
    for x0, x1, y0, y1 in rects:
        inside |= (gx >= x0) & (gx <= x1) & (gy >= y0) & (gy <= y1)
    return np.column_stack([gx[inside], gy[inside], np.zeros(inside.sum())])


RECTANGLE = [(-3, 3, -2, 2)]
PLUS = [(-6, 6, -1.5, 1.5), (-1.5, 1.5, -6, 6)]


def _atom(rects, structures=()):
    sign = SignInstance(0, [0.0, 0.0, 2.0], [0.0, -1.0, 0.0])
    return AtomMap(signs=[sign], structures=list(structures), path_cloud=PointCloud3(_region(rects)),
                   anchor=(0.0, 0.0, 0.0))


def _stairs(center, id_=0):
    box = OrientedBox3(np.array([center[0], center[1], 1.25]), np.array([0.5, 1.0, 1.25]), 0.0)
    cloud = PointCloud3(np.array([box.center + d for d in np.diag(box.half_extents)] + [box.center - box.half_extents]))
    return StructureInstance(id_, "stairs", box, 0.9, cloud)


def test_sign_frame_puts_reader_forward_on_y():
    frame = sign_frame(SignInstance(0, [3.0, 4.0, 2.0], [0.0, -1.0, 0.0]))
    assert np.allclose(frame.apply(np.array([3.0, 4.0])), [0.0, 0.0])
    assert np.allclose(frame.apply(np.array([3.0, 6.0])), [0.0, 2.0])

    # the reader stands on +x and looks towards -x, so their left is world -y
    frame = sign_frame(SignInstance(0, [0.0, 0.0, 2.0], [1.0, 0.0, 0.0]))
    assert np.allclose(frame.apply(np.array([0.0, -1.0])), [-1.0, 0.0])


def test_sign_frame_unaligned():
    frame = sign_frame(SignInstance(0, [3.0, 4.0, 2.0], [1.0, 0.0, 0.0]), align=False)
    assert np.allclose(frame.apply(np.array([4.0, 4.0])), [1.0, 0.0])


def test_sign_frame_vertical_normal():
    with pytest.raises(AmbiguousFrame):
        sign_frame(SignInstance(0, [0.0, 0.0, 2.0], [0.0, 0.0, 1.0]))


def test_rectangle_polygon():
    polygon = extract_polygon(PointCloud3(_region(RECTANGLE)), Rigid2(), RenderConfig())
    assert len(polygon) == 4
    assert np.allclose(np.abs(polygon), [3.0, 2.0], atol=0.15)
    # counter-clockwise, starting at the lowest vertex
    area = 0.5 * np.sum(polygon[:, 0] * np.roll(polygon[:, 1], -1) - np.roll(polygon[:, 0], -1) * polygon[:, 1])
    assert area > 0
    assert polygon[0][1] == polygon[:, 1].min()


def test_plus_polygon():
    polygon = extract_polygon(PointCloud3(_region(PLUS)), Rigid2(), RenderConfig())
    assert len(polygon) == 12
    labels = classify_vertices(polygon, RenderConfig().reflex_eps)
    assert (labels == CONVEX).sum() == 8
    assert (labels == REFLEX).sum() == 4


def test_outer_border_of_block():
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2:6, 3:9] = 1
    border = {tuple(p) for p in _outer_border(mask)}
    expected = {(r, c) for r in range(2, 6) for c in range(3, 9) if r in (2, 5) or c in (3, 8)}
    assert border == expected
    assert len(expected) == 16


def test_outer_border_keeps_largest_blob():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[1:3, 1:3] = 1
    mask[5:11, 4:10] = 1
    border = _outer_border(mask)
    assert border[:, 0].min() == 5 and border[:, 1].min() == 4
    assert _outer_border(np.zeros((4, 4), dtype=np.uint8)).shape == (0, 2)

def test_too_few_points():
    cloud = PointCloud3(np.column_stack([np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)]))
    with pytest.raises(EmptyScene):
        extract_polygon(cloud, Rigid2(), RenderConfig())


def test_points_outside_window_are_ignored():
    cloud = PointCloud3(_region(RECTANGLE) + [40.0, 0.0, 0.0])
    with pytest.raises(EmptyScene):
        extract_polygon(cloud, Rigid2(), RenderConfig())


def test_rectangle_has_one_frontier():
    cfg = RenderConfig()
    frontiers = find_frontiers(extract_polygon(PointCloud3(_region(RECTANGLE)), Rigid2(), cfg), cfg)
    assert [f.letter for f in frontiers] == ["A"]


def test_exact_plus_frontiers():
    cfg = RenderConfig()
    plus = np.array([[-1.5, -6], [1.5, -6], [1.5, -1.5], [6, -1.5], [6, 1.5], [1.5, 1.5], [1.5, 6], [-1.5, 6],
                     [-1.5, 1.5], [-6, 1.5], [-6, -1.5], [-1.5, -1.5]])
    frontiers = find_frontiers(plus, cfg)
    assert [f.letter for f in frontiers] == ["A", "B", "C", "D"]
    expected = [(-6, 0), (0, 6), (6, 0), (0, -6)]
    for frontier, point in zip(frontiers, expected):
        assert np.allclose(frontier.point, point, atol=1e-9)


def test_short_protrusions_are_dropped():
    # the 0.2 m bump is below the minimum protrusion length, the rest splits into two runs
    notch = np.array([[0, 0], [4, 0], [4, 2], [2.1, 2], [2.1, 2.2], [1.9, 2.2], [1.9, 2], [0, 2]], dtype=float)
    frontiers = find_frontiers(notch, RenderConfig())
    assert len(frontiers) == 2
    assert np.allclose(frontiers[0].point, [0.0, 0.475])
    assert np.allclose(frontiers[1].point, [4.0, 0.475])


def test_structures_in_sign_frame():
    atom = _atom(RECTANGLE, [_stairs((2.0, 0.0))])
    boxes = project_structures(atom, sign_frame(atom.signs[0]), RenderConfig())
    assert [b.label for b in boxes] == ["stairs #0"]
    assert np.allclose(boxes[0].center, [2.0, 0.0])
    assert 0 <= boxes[0].yaw < np.pi / 2

    far = _atom(RECTANGLE, [_stairs((30.0, 0.0))])
    assert project_structures(far, sign_frame(far.signs[0]), RenderConfig()) == []


def test_render_sidecar_round_trip():
    atom = _atom(PLUS, [_stairs((3.0, 3.5))])
    out = render(atom, 0, RenderConfig(image_px=256))
    assert out.image[:8] == b"\x89PNG\r\n\x1a\n"
    back = AtomRender.from_png(out.image)
    assert [f.letter for f in back.frontiers] == ["A", "B", "C", "D"]
    assert back.box("stairs #0").class_label == "stairs"
    assert np.allclose(back.polygon, out.polygon)
    assert back.frame.to_dict() == out.frame.to_dict()

    with pytest.raises(ParseError):
        AtomRender.from_png(b"not a png")
    with pytest.raises(ParseError):
        AtomRender.from_sidecar({"frontiers": []})


def test_render_is_byte_identical():
    atom = _atom(PLUS, [_stairs((3.0, 3.5))])
    cfg = RenderConfig(image_px=256)
    assert render(atom, 0, cfg).image == render(atom, 0, cfg).image


def test_t_junction_render(t_atom):
    out = render(t_atom, 0)
    assert len(out.frontiers) == 3
    assert 6 <= len(out.polygon) <= 14
    assert [b.class_label for b in out.boxes] == ["stairs"]


@pytest.mark.parametrize("seed", range(50))
def test_render_is_invariant_to_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    g = Rigid2(rng.uniform(-np.pi, np.pi), *rng.uniform(-20, 20, size=2))
    cfg = RenderConfig()
    atom = _atom(PLUS, [_stairs((3.0, 3.5))])
    moved = atom.transformed(g)

    results = []
    for a in (atom, moved):
        frame = sign_frame(a.signs[0])
        polygon = extract_polygon(a.path_cloud, frame, cfg)
        results.append((polygon, find_frontiers(polygon, cfg), project_structures(a, frame, cfg)))

    (poly_a, front_a, box_a), (poly_b, front_b, box_b) = results
    assert np.allclose(poly_a, poly_b, atol=1e-4)
    assert [f.letter for f in front_a] == [f.letter for f in front_b]
    for fa, fb in zip(front_a, front_b):
        assert np.allclose(fa.point, fb.point, atol=1e-4)
    for ba, bb in zip(box_a, box_b):
        assert ba.label == bb.label
        assert np.allclose(ba.center, bb.center, atol=1e-4)
        assert np.allclose(ba.half_extents, bb.half_extents, atol=1e-4)
        assert np.isclose(ba.yaw, bb.yaw, atol=1e-4)
