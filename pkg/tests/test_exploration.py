"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import numpy as np
import pytest

from atomnav.errors import EmptyScene, InvalidAgentPose
from atomnav.exploration import ExploreConfig, SimAgent, candidate_frontiers, explore, scan_in_place
from atomnav.mapbuilder import MapBuilder
from atomnav.scenemodel import AtomMap, SignInstance
from atomnav.simulator import load_scene
from atomnav.utils import DATA_DIR

SCENES_DIR = DATA_DIR / "scenes"


def _most_observed(atom):
    return max(atom.signs, key=lambda s: (s.observation_count, -s.id)).id


@pytest.fixture(scope="module")
def occlusion_scene():
    return load_scene(SCENES_DIR / "occlusion_corridor.json")


def test_agent_start_must_be_navigable(occlusion_scene):
    with pytest.raises(InvalidAgentPose):
        SimAgent(occlusion_scene, 5.0, 0.0, 0.0)


def test_can_drive(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    assert agent.can_drive(np.array([0.0, 0.0]), np.array([0.0, 9.0]))
    # the wall runs along x = 1.5 between y = 1.5 and y = 8.5
    assert not agent.can_drive(np.array([0.0, 5.0]), np.array([1.5, 5.0]))
    # leaves the corridor
    assert not agent.can_drive(np.array([0.0, 0.0]), np.array([3.0, 0.0]))


def test_drive_to(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    assert agent.drive_to(0.0, 10.0)
    assert np.allclose(agent.position, [0.0, 10.0])
    assert agent.drive_to(4.0, 10.0)
    assert not agent.drive_to(4.0, 0.0)
    assert np.allclose(agent.position, [4.0, 10.0])


def test_scan_in_place(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    builder = MapBuilder()
    atom = scan_in_place(agent, builder, 6)
    assert len(atom.frame_log) == 6
    assert agent.clock == 6.0
    assert np.allclose([pose.heading() for _, pose in atom.frame_log][:2], [np.pi / 2, np.pi / 2 + np.pi / 3])


def test_explore_needs_a_sign(occlusion_scene):
    agent = SimAgent(occlusion_scene, 0.0, -1.5, -np.pi / 2)
    builder = MapBuilder()
    builder.add_frame(agent.observe())
    with pytest.raises(EmptyScene):
        explore(agent, builder)


def test_candidate_frontiers_of_empty_map():
    atom = AtomMap(signs=[SignInstance(0, [0.0, 0.0, 2.0], [0.0, -1.0, 0.0])])
    with pytest.raises(EmptyScene):
        candidate_frontiers(atom, 0)


def test_exploration_reveals_occluded_branch(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    builder = MapBuilder()
    scan_in_place(agent, builder)
    sign_id = _most_observed(builder.atom)
    initial = candidate_frontiers(builder.atom, sign_id)
    assert len(initial) == 2

    atom, visits = explore(agent, builder)
    assert len(visits) >= 3
    assert len(visits) > len(initial)
    assert len(candidate_frontiers(atom, sign_id)) == 3
    for visit in visits:
        assert occlusion_scene.is_navigable(*visit["pose"][:2])
        assert visit["t"][1] - visit["t"][0] == 1.0


def test_zero_budget(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    builder = MapBuilder()
    scan_in_place(agent, builder)
    atom, visits = explore(agent, builder, ExploreConfig(budget=0))
    assert visits == []
    assert len(atom.frame_log) == 12


@pytest.mark.slow
@pytest.mark.parametrize("name", ["atrium", "lobby", "plus_junction", "t_junction", "y_fork"])
def test_exploration_finds_every_branch(name):
    scene = load_scene(SCENES_DIR / f"{name}.json")
    agent = SimAgent.at_scan_pose(scene)
    builder = MapBuilder()
    scan_in_place(agent, builder)
    atom, _ = explore(agent, builder)
    assert len(candidate_frontiers(atom, _most_observed(atom))) == len(scene.branches)


@pytest.mark.parametrize("n_scan_steps", [4, 12])
def test_scan_steps_come_from_config(occlusion_scene, n_scan_steps):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    atom = scan_in_place(agent, MapBuilder(), cfg=ExploreConfig(n_scan_steps=n_scan_steps))
    assert len(atom.frame_log) == n_scan_steps


def test_scan_needs_a_step(occlusion_scene):
    agent = SimAgent.at_scan_pose(occlusion_scene)
    with pytest.raises(ValueError):
        scan_in_place(agent, MapBuilder(), 0)
