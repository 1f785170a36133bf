"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import json

import pytest

from atomnav.exploration import ExploreConfig
from atomnav.grounding import GroundingConfig
from atomnav.mapbuilder import BuilderConfig
from atomnav.render import RenderConfig
from atomnav.utils import DEFAULT_SETTINGS, canonical_dumps, config_from_dict, dump_config, get_scene_list, load_config


def test_defaults_are_not_mutated():
    cfg = load_config(environ={})
    cfg["vlm"]["endpoint"] = "http"
    assert DEFAULT_SETTINGS["vlm"]["endpoint"] == "oracle"


def test_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"vlm": {"endpoint": "replay:/file", "retries": 1}, "bench": {"jobs": 2}}))
    environ = {"ATOMNAV_VLM": "http", "ATOMNAV_JOBS": "4"}

    assert load_config(path, environ={})["vlm"]["endpoint"] == "replay:/file"
    cfg = load_config(path, environ=environ)
    assert cfg["vlm"]["endpoint"] == "http"
    assert cfg["vlm"]["retries"] == 1
    assert cfg["bench"]["jobs"] == 4
    cfg = load_config(path, {"vlm": {"endpoint": "oracle", "retries": None}}, environ=environ)
    assert cfg["vlm"]["endpoint"] == "oracle"
    assert cfg["vlm"]["retries"] == 1


def test_unknown_section(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"plotting": {}}))
    with pytest.raises(ValueError):
        load_config(path, environ={})


def test_bad_environment_value():
    with pytest.raises(ValueError):
        load_config(environ={"ATOMNAV_JOBS": "many"})


@pytest.mark.parametrize("cls", [BuilderConfig, RenderConfig, GroundingConfig, ExploreConfig])
def test_config_dataclasses(cls):
    assert cls.from_dict(None) == cls()
    with pytest.raises(ValueError):
        cls.from_dict({"no_such_key": 1})


def test_config_values_are_validated():
    with pytest.raises(ValueError):
        BuilderConfig(tau_angle=95.0)
    with pytest.raises(ValueError):
        RenderConfig(image_px=64)
    with pytest.raises(ValueError):
        GroundingConfig(grounder="random")
    assert config_from_dict(RenderConfig, {"cell": 0.2}).cell == 0.2


def test_dump_config(tmp_path):
    dump_config(DEFAULT_SETTINGS, tmp_path / "cfg.json")
    assert json.loads((tmp_path / "cfg.json").read_text()) == json.loads(json.dumps(DEFAULT_SETTINGS))


def test_canonical_dumps():
    assert canonical_dumps({"b": [1, 2], "a": "x"}) == '{"a":"x","b":[1,2]}'
    with pytest.raises(ValueError):
        canonical_dumps({"a": float("nan")})


def test_scene_list():
    scenes = get_scene_list()
    assert len(scenes) >= 20
    assert all(p.is_file() for p in scenes)
    assert len({p.stem for p in scenes}) == len(scenes)
