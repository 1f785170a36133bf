"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import numpy as np
import pytest

from atomnav.errors import ParseError
from atomnav.geometry import OrientedBox3, PointCloud3, Rigid2, camera_pose
from atomnav.scenemodel import (AtomMap, Instruction, NavCue, NavCueSet, ParseRecord, SignInstance,
                                StructureInstance, deserialize_atom, format_instruction_dict,
                                iter_cue_locations, normalize_phrase, read_atom, serialize_atom,
                                write_atom)


def _atom() -> AtomMap:
    cues = NavCueSet((NavCue("Gate", "left"), NavCue("terrace", "up-stairs")), ("Reception",))
    sign = SignInstance(0, np.array([0.0, 1.5, 2.0]), np.array([0.0, -2.0, 0.0]),
                        parse_history=[ParseRecord(0.0, cues, 2.5, 4.0)],
                        merged_cues=cues,
                        observation_count=3)
    cloud = PointCloud3(np.array([[-2.5, 4.0, 0.25], [-2.0, 3.0, 1.0], [-3.0, 5.0, 2.0], [-2.0, 5.0, 0.5]]))
    box = OrientedBox3(np.array([-2.5, 4.0, 1.25]), np.array([1.0, 1.5, 1.25]), 0.0)
    structure = StructureInstance(0, "stairs", box, 0.9, cloud, n_detections=2)
    path = PointCloud3(np.array([[x, y, 0.0] for x in np.arange(-2, 2, 0.5) for y in np.arange(-1, 1, 0.5)]))
    return AtomMap([sign], [structure], path, [(0.0, camera_pose(0.0, -1.0, np.pi / 2, 1.2))],
                   (0.0, -1.0, np.pi / 2))


def test_instruction_vocabulary():
    assert len(Instruction) == 17
    assert np.allclose(Instruction.LEFT.direction, [-1, 0])
    assert np.allclose(np.linalg.norm(Instruction.FORWARD_RIGHT.direction), 1.0)
    assert Instruction.RIGHT_THEN_FORWARD.steps == (Instruction.RIGHT, Instruction.FORWARD)
    assert Instruction.DOWN_ESCALATOR.structure_class == "escalator"
    assert Instruction.UP_STAIRS.vertical_sense == "up"
    assert Instruction.LOCATIONAL.is_locational
    with pytest.raises(ValueError):
        Instruction.UP_STAIRS.direction
    with pytest.raises(ValueError):
        Instruction.LEFT.steps


@pytest.mark.parametrize("raw,expected", [("  Gate  A ", "gate a"), ("CAFÉ", "café"),
                                          ("Café", "café"), ("\tfood\ncourt", "food court")])
def test_normalize_phrase(raw, expected):
    assert normalize_phrase(raw) == expected


def test_cue_set_deduplicates():
    cues = NavCueSet((NavCue("Gate", "left"), NavCue("gate ", "left"), NavCue("gate", "right")),
                     ("here", "Here", ""))
    assert len(cues.cues) == 2
    assert cues.locational == ("here",)
    assert cues.locations() == ["gate", "here"]
    assert len(cues) == 3


def test_cue_set_rejects_locational_cue():
    with pytest.raises(ValueError):
        NavCueSet((NavCue("here", "locational"),))
    with pytest.raises(ValueError):
        NavCue("   ", "left")


def test_instruction_dict_layout():
    cues = NavCueSet((NavCue("gate", "left"),), ("reception",))
    out = cues.as_instruction_dict()
    assert list(out) == [i.value for i in Instruction]
    assert out["left"] == ["gate"]
    assert out["locational"] == ["reception"]
    assert format_instruction_dict(cues).startswith("{'forward': []")


def test_sign_normal_is_normalized():
    sign = SignInstance(1, np.zeros(3), np.array([0.0, -2.0, 0.0]))
    assert np.allclose(sign.normal, [0, -1, 0])
    with pytest.raises(ValueError):
        SignInstance(1, np.zeros(3), np.zeros(3))


def test_lookup_by_id():
    atom = _atom()
    assert atom.sign(0).observation_count == 3
    assert atom.structure(0).class_label == "stairs"
    with pytest.raises(KeyError):
        atom.sign(4)


def test_serialization_round_trip():
    atom = _atom()
    data = serialize_atom(atom)
    back = deserialize_atom(data)
    assert back == atom
    assert serialize_atom(back) == data


def test_serialization_is_canonical():
    data = serialize_atom(_atom())
    assert b" " not in data
    assert data.index(b'"anchor"') < data.index(b'"atom_version"')


@pytest.mark.parametrize("data", [b"{", b"[]", b'{"atom_version": 99}', b"\xff\xfe"])
def test_deserialize_errors(data):
    with pytest.raises(ParseError):
        deserialize_atom(data)


def test_deserialize_reports_offset():
    data = serialize_atom(_atom()).replace(b'"structures":[{', b'"structures":[{"bogus":1,', 1)
    data = data.replace(b'"class":"stairs"', b'"klass":"stairs"')
    with pytest.raises(ParseError) as err:
        deserialize_atom(data)
    assert err.value.offset == data.find(b'"structures"')


def test_write_and_read(tmp_path):
    atom = _atom()
    write_atom(atom, tmp_path / "map.atom.json")
    assert read_atom(tmp_path / "map.atom.json") == atom

    write_atom(atom, tmp_path / "split.atom.json", sibling_cloud=True)
    assert (tmp_path / "split.cloud.bin").is_file()
    assert read_atom(tmp_path / "split.atom.json") == atom

    (tmp_path / "split.cloud.bin").unlink()
    with pytest.raises(ParseError):
        read_atom(tmp_path / "split.atom.json")


def test_transformed_moves_everything():
    atom = _atom()
    g = Rigid2(np.pi / 2, 1.0, 0.0)
    moved = atom.transformed(g)
    assert np.allclose(moved.sign(0).centroid, [-0.5, 0.0, 2.0])
    assert np.allclose(moved.sign(0).normal, [1.0, 0.0, 0.0])
    assert np.allclose(moved.path_cloud.points[:, :2], g.apply(atom.path_cloud.points[:, :2]))
    assert np.isclose(moved.anchor[2], np.pi)
    assert moved.transformed(g.inverse()).sign(0).merged_cues == atom.sign(0).merged_cues


def test_iter_cue_locations():
    items = [(loc, None if cue is None else cue.instruction.value) for _, loc, cue in iter_cue_locations(_atom())]
    assert items == [("gate", "left"), ("terrace", "up-stairs"), ("reception", None)]
