"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io
import itertools

import numpy as np
import pytest
from PIL import Image

from atomnav.datasets import RecordedSequence
from atomnav.errors import InsufficientDepth
from atomnav.geometry import PointCloud3, Rigid2, camera_pose
from atomnav.mapbuilder import (TAG_KEY, BuilderConfig, MapBuilder, associate_structures, build, cluster_sign,
                                estimate_sign_geometry, optimal_assignment, sign_crop, viewpoint_suitable)
from atomnav.scenemodel import AtomMap, SignInstance, deserialize_atom, serialize_atom
from atomnav.simulator import AgentState, OracleVlm, observe
from atomnav.vlm import VlmResponse


class ConfusedVlm:

    def chat(self, request):
        return VlmResponse("I cannot read this sign, sorry.")


def _sign_frame(t_scene, y=-1.5):
    return observe(t_scene, AgentState(0.0, y, np.pi / 2, t_scene.camera_height))


def _block(center, half, n=6):
    axes = [np.linspace(c - h, c + h, n) for c, h in zip(center, half)]
    return PointCloud3(np.array(list(itertools.product(*axes))))


def test_estimate_sign_geometry(t_scene):
    frame = _sign_frame(t_scene)
    assert frame.sign_tags == ["t-main"]
    centroid, normal = estimate_sign_geometry(frame, 0)
    assert np.allclose(centroid, [0.0, 1.5, 2.0], atol=0.05)
    assert np.allclose(normal, [0.0, -1.0, 0.0], atol=0.02)

    with pytest.raises(InsufficientDepth):
        estimate_sign_geometry(frame, 0, min_pixels=frame.sign_masks[0].sum() + 1)


def test_sign_crop_carries_tag(t_scene):
    crop = sign_crop(_sign_frame(t_scene), 0)
    with Image.open(io.BytesIO(crop)) as img:
        assert img.text[TAG_KEY] == "t-main"
        assert img.size[0] > img.size[1]


def test_cluster_sign():
    cfg = BuilderConfig()
    atom = AtomMap()
    normal = np.array([0.0, -1.0, 0.0])
    assert cluster_sign(atom, np.array([0.0, 0.0, 2.0]), normal, cfg) == 0
    assert cluster_sign(atom, np.array([0.3, 0.0, 2.0]), normal, cfg) == 0
    assert atom.signs[0].observation_count == 2
    assert np.allclose(atom.signs[0].centroid, [0.15, 0.0, 2.0])

    # too far, then too oblique
    assert cluster_sign(atom, np.array([0.8, 0.0, 2.0]), normal, cfg) == 1
    tilted = np.array([np.sin(np.radians(25)), -np.cos(np.radians(25)), 0.0])
    assert cluster_sign(atom, np.array([0.15, 0.0, 2.0]), tilted, cfg) == 2
    assert len(atom.signs) == 3


@pytest.mark.parametrize("dist,expected", [(3.5, True), (3.6, False)])
def test_viewpoint_distance_gate(dist, expected):
    sign = SignInstance(0, [0.0, 0.0, 2.0], [0.0, -1.0, 0.0])
    assert viewpoint_suitable(camera_pose(0.0, -dist, np.pi / 2, 1.2), sign, BuilderConfig()) == expected


@pytest.mark.parametrize("angle,expected", [(29.9, True), (30.1, False), (-29.9, True)])
def test_viewpoint_angle_gate(angle, expected):
    sign = SignInstance(0, [0.0, 0.0, 2.0], [0.0, -1.0, 0.0])
    pose = camera_pose(0.0, -1.0, np.pi / 2 + np.radians(angle), 1.2)
    assert viewpoint_suitable(pose, sign, BuilderConfig()) == expected


def _brute_force(cost, gate):
    allowed = np.isfinite(cost) & (cost <= gate)
    transpose = cost.shape[0] > cost.shape[1]
    if transpose:
        cost, allowed = cost.T, allowed.T
    best = (0, 0.0)
    for cols in itertools.permutations(range(cost.shape[1]), cost.shape[0]):
        pairs = [(r, c) for r, c in enumerate(cols) if allowed[r, c]]
        total = sum(cost[r, c] for r, c in pairs)
        if len(pairs) > best[0] or (len(pairs) == best[0] and total < best[1]):
            best = (len(pairs), total)
    return best


@pytest.mark.parametrize("seed", range(200))
def test_optimal_assignment_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 1, size=(int(rng.integers(1, 7)), int(rng.integers(1, 7))))
    cost[rng.random(cost.shape) < 0.3] = np.inf
    gate = rng.uniform(0.3, 1.0)

    pairs = optimal_assignment(cost, gate)
    n_best, cost_best = _brute_force(cost, gate)
    assert len(pairs) == n_best
    assert abs(sum(cost[r, c] for r, c in pairs) - cost_best) < 1e-6
    assert len({r for r, _ in pairs}) == len(pairs) == len({c for _, c in pairs})
    assert all(cost[r, c] <= gate for r, c in pairs)


def test_optimal_assignment_empty():
    assert optimal_assignment(np.zeros((0, 3))) == []


def test_associate_structures():
    cfg = BuilderConfig()
    structures = []
    stairs = _block([2.0, 0.0, 1.0], [0.5, 1.0, 1.0])
    assert associate_structures(structures, [("stairs", stairs, 0.8)], cfg) == [(0, 0)]

    shifted = PointCloud3(stairs.points + [0.3, 0.0, 0.0])
    far = PointCloud3(stairs.points + [5.0, 0.0, 0.0])
    door = _block([2.0, 0.0, 1.0], [0.5, 0.1, 1.0])
    matches = associate_structures(structures, [("stairs", shifted, 0.4), ("stairs", far, 0.9), ("door", door, 0.7)],
                                   cfg)
    assert matches == [(0, 0), (1, 1), (2, 2)]
    assert structures[0].n_detections == 2
    assert np.isclose(structures[0].confidence, 0.6)
    assert structures[0].box.contains(shifted.points, tol=0.05).all()
    assert [s.class_label for s in structures] == ["stairs", "stairs", "door"]


def test_built_map(t_atom):
    assert len(t_atom.signs) == 1
    sign = t_atom.signs[0]
    assert np.allclose(sign.centroid, [0.0, 1.5, 2.0], atol=0.1)
    assert np.allclose(sign.normal, [0.0, -1.0, 0.0], atol=0.05)
    assert sign.parse_history
    assert {c.location: c.instruction.value for c in sign.merged_cues.cues} == {
        "gate": "left",
        "parking": "right",
        "lobby": "backwards",
        "terrace": "up-stairs"
    }
    assert sign.merged_cues.locational == ("reception",)

    assert [s.class_label for s in t_atom.structures] == ["stairs"]
    assert np.linalg.norm(t_atom.structures[0].box.center[:2] - [-2.5, 4.0]) < 0.75

    assert len(t_atom.frame_log) == 22
    assert len(t_atom.path_cloud) > 1000
    assert np.all(np.abs(t_atom.path_cloud.points[:, 2]) < 0.05)


def test_build_is_deterministic(t_atom, t_sequence, t_scene):
    again = build(RecordedSequence(t_sequence), vlm=OracleVlm(t_scene), progress=False)
    assert again == t_atom


def test_build_without_vlm(t_atom, t_sequence):
    atom = build(RecordedSequence(t_sequence), progress=False)
    assert len(atom.signs) == 1
    assert atom.signs[0].merged_cues.is_empty()
    assert not atom.signs[0].parse_history
    assert atom.path_cloud == t_atom.path_cloud
    assert len(atom.structures) == len(t_atom.structures)


def test_unparseable_reply_becomes_warning(t_scene):
    builder = MapBuilder(vlm=ConfusedVlm())
    builder.add_frame(_sign_frame(t_scene))
    atom = builder.finalize()
    assert len(atom.signs) == 1
    assert not atom.signs[0].parse_history
    assert any("cannot read" in w.lower() for w in atom.signs[0].warnings)


def test_sign_without_depth_is_skipped(t_scene):
    frame = _sign_frame(t_scene)
    frame.depth[frame.sign_masks[0]] = 0.0
    builder = MapBuilder()
    builder.add_frame(frame)
    assert not builder.atom.signs
    assert len(builder.warnings) == 1
    assert len(builder.atom.frame_log) == 1


def test_depth_warning_is_kept_in_built_map(t_scene):
    frame = _sign_frame(t_scene)
    frame.depth[frame.sign_masks[0]] = 0.0
    atom = build([frame], progress=False)
    assert not atom.signs
    assert len(atom.warnings) == 1
    assert atom.warnings[0].startswith("InsufficientDepth")
    assert deserialize_atom(serialize_atom(atom)).warnings == atom.warnings
    assert atom.transformed(Rigid2(0.5, 1.0, -2.0)).warnings == atom.warnings
