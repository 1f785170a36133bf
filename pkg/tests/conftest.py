"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import copy

import pytest

from atomnav.datasets import RecordedSequence
from atomnav.mapbuilder import build
from atomnav.simulator import OracleVlm, default_trajectory, emit_sequence, load_scene
from atomnav.utils import DATA_DIR

SCENES_DIR = DATA_DIR / "scenes"

# single corridor with two branches, too simple for a four-choice benchmark
CORRIDOR_SCENE = {
    "name": "corridor",
    "camera": {"width": 128, "height": 128, "hfov_deg": 90.0, "height_m": 1.2, "max_range": 7.0},
    "corridors": [{"polyline": [[-5.0, 0.0], [5.0, 0.0]], "width": 3.0}],
    "branches": [
        {"name": "west", "polyline": [[0.0, 0.0], [-5.0, 0.0]], "entrance": [-3.0, 0.0]},
        {"name": "east", "polyline": [[0.0, 0.0], [5.0, 0.0]], "entrance": [3.0, 0.0]}
    ],
    "signs": [{
        "tag": "c-main",
        "position": [0.0, 1.5, 2.0],
        "normal": [0.0, -1.0, 0.0],
        "cues": [["gate", "left"], ["parking", "right"]]
    }]
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs over all shipped scenes")


@pytest.fixture
def corridor_scene_dict():
    return copy.deepcopy(CORRIDOR_SCENE)


@pytest.fixture(scope="session")
def t_scene_file():
    return SCENES_DIR / "t_junction.json"


@pytest.fixture(scope="session")
def t_scene(t_scene_file):
    return load_scene(t_scene_file)


@pytest.fixture(scope="session")
def t_sequence(tmp_path_factory, t_scene):
    out = tmp_path_factory.mktemp("t_junction")
    emit_sequence(t_scene, default_trajectory(t_scene), out)
    return out


@pytest.fixture(scope="session")
def t_atom(t_sequence, t_scene):
    """Map of the T-junction built with the oracle. Shared, tests must not mutate it."""
    return build(RecordedSequence(t_sequence), vlm=OracleVlm(t_scene), progress=False)
