"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from shapely.geometry import LineString

from .datasets import Frame
from .errors import EmptyScene, InvalidAgentPose
from .geometry import Rigid2
from .mapbuilder import MapBuilder
from .render import Frontier, RenderConfig, extract_polygon, find_frontiers, sign_frame
from .scenemodel import AtomMap
from .simulator import AgentState, SceneSpec, observe, scan_pose
from .utils import config_from_dict

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExploreConfig:
    n_scan_steps: int = 12
    standoff: float = 0.5
    revisit_radius: float = 0.5
    budget: int = 8

    def __post_init__(self):
        if self.n_scan_steps < 1:
            raise ValueError(f"ExploreConfig.n_scan_steps must be at least 1, got {self.n_scan_steps}")
        if self.standoff < 0 or self.revisit_radius <= 0:
            raise ValueError("ExploreConfig.standoff must be >= 0 and revisit_radius > 0")
        if self.budget < 0:
            raise ValueError(f"ExploreConfig.budget must be >= 0, got {self.budget}")

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "ExploreConfig":
        return config_from_dict(cls, data)


class SimAgent:
    """Agent driving on straight segments through a simulator scene.

    Parameters
    ----------
    scene : SceneSpec
        Scene to move and observe in.
    x, y, yaw : float
        Start pose, yaw in radians.
    dt : float, optional
        Time between two observations, by default 1.0
    """

    def __init__(self, scene: SceneSpec, x: float, y: float, yaw: float, dt: float = 1.0):
        if not scene.is_navigable(x, y):
            raise InvalidAgentPose(0, f"start ({x:.3f}, {y:.3f}) in scene {scene.name}")
        self.scene = scene
        self.state = AgentState(float(x), float(y), float(yaw), scene.camera_height)
        self.home = (float(x), float(y))
        self.dt = dt
        self.clock = 0.0
        self.n_observations = 0

    @classmethod
    def at_scan_pose(cls, scene: SceneSpec, dt: float = 1.0) -> "SimAgent":
        return cls(scene, *scan_pose(scene), dt=dt)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.state.x, self.state.y])

    def observe(self) -> Frame:
        frame = observe(self.scene, self.state, self.clock, self.n_observations)
        self.clock += self.dt
        self.n_observations += 1
        return frame

    def turn_to(self, yaw: float):
        self.state.yaw = float(yaw)

    def can_drive(self, start: np.ndarray, goal: np.ndarray) -> bool:
        segment = LineString([tuple(start), tuple(goal)])
        if not self.scene.ground.covers(segment):
            return False
        return not any(segment.intersects(LineString([tuple(o.start), tuple(o.end)])) for o in self.scene.occluders)

    def drive_to(self, x: float, y: float) -> bool:
        """Drive straight to (x, y), or through the start position if the direct segment collides.

        Returns False and stays put if neither route is free.
        """
        goal = np.array([x, y], dtype=np.float64)
        home = np.array(self.home)
        if self.can_drive(self.position, goal):
            pass
        elif self.can_drive(self.position, home) and self.can_drive(home, goal):
            LOGGER.debug(f"Driving to ({x:.2f}, {y:.2f}) through the start position")
        else:
            return False
        self.state.x, self.state.y = float(x), float(y)
        return True


def scan_in_place(agent: SimAgent,
                  builder: MapBuilder,
                  n_steps: Optional[int] = None,
                  cfg: ExploreConfig = None) -> AtomMap:
    """Turn a full circle in `n_steps` equal increments, folding every view into the map.

    `n_steps` defaults to `cfg.n_scan_steps`.
    """
    cfg = cfg or ExploreConfig()
    n_steps = cfg.n_scan_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ValueError(f"scan_in_place needs at least one step, got {n_steps}")
    yaw0 = agent.state.yaw
    for i in range(n_steps):
        agent.turn_to(yaw0 + 2 * np.pi * i / n_steps)
        builder.add_frame(agent.observe())
    return builder.atom


def candidate_frontiers(atom: AtomMap, sign_id: int, cfg: RenderConfig = None) -> List[Frontier]:
    """Frontiers of the current path polygon around a sign, in the sign frame and letter order."""
    cfg = cfg or RenderConfig()
    if len(atom.path_cloud) == 0:
        raise EmptyScene("The map has no path points yet")
    frame = sign_frame(atom.sign(sign_id), cfg.align_to_sign)
    return find_frontiers(extract_polygon(atom.path_cloud, frame, cfg), cfg)


def _inward_step(polygon: np.ndarray, point: np.ndarray, length: float) -> np.ndarray:
    """Point `length` inside a CCW polygon, along the normal of the edge nearest to `point`."""
    starts = polygon
    ends = np.roll(polygon, -1, axis=0)
    edges = ends - starts
    lengths = np.maximum(np.sum(edges**2, axis=1), 1e-12)
    s = np.clip(np.sum((point - starts) * edges, axis=1) / lengths, 0.0, 1.0)
    dist = np.linalg.norm(starts + s[:, None] * edges - point, axis=1)
    e = edges[int(np.argmin(dist))]
    normal = np.array([-e[1], e[0]]) / np.linalg.norm(e)
    return point + length * normal


def _standoff(frame: Rigid2, polygon: np.ndarray, frontier: Frontier, cfg: ExploreConfig) -> np.ndarray:
    return frame.inverse().apply(_inward_step(polygon, frontier.point, cfg.standoff))


def explore(agent: SimAgent,
            builder: MapBuilder,
            cfg: ExploreConfig = None,
            render_cfg: RenderConfig = None,
            budget: Optional[int] = None) -> Tuple[AtomMap, List[Dict]]:
    """Visit the frontiers around the most observed sign until none is left or the budget is spent.

    Frontiers are recomputed after every visit. A frontier within `revisit_radius` of an
    already visited one is skipped, unreachable frontiers are logged and marked visited.

    Returns
    -------
    Tuple[AtomMap, List[Dict]]
        Finalized map and one log entry per visit.
    """
    cfg = cfg or ExploreConfig()
    render_cfg = render_cfg or RenderConfig()
    budget = cfg.budget if budget is None else budget
    atom = builder.atom
    if not atom.signs:
        raise EmptyScene("No sign observed yet, scan before exploring")
    sign_id = max(atom.signs, key=lambda s: (s.observation_count, -s.id)).id

    visited: List[np.ndarray] = []
    visits = []
    attempts = 0
    while len(visits) < budget and attempts < 4 * budget + 4:
        frame = sign_frame(atom.sign(sign_id), render_cfg.align_to_sign)
        polygon = extract_polygon(atom.path_cloud, frame, render_cfg)
        target = None
        for frontier in find_frontiers(polygon, render_cfg):
            point = frame.inverse().apply(frontier.point)
            if all(np.linalg.norm(point - v) > cfg.revisit_radius for v in visited):
                target = (frontier, point)
                break
        if target is None:
            break
        attempts += 1
        frontier, point = target
        visited.append(point)

        goal = _standoff(frame, polygon, frontier, cfg)
        if not agent.scene.is_navigable(*goal) or not agent.drive_to(*goal):
            LOGGER.warning(f"Frontier {frontier.letter} at ({point[0]:.2f}, {point[1]:.2f}) is unreachable, skipping")
            continue

        outward = point - goal
        if np.linalg.norm(outward) < 1e-6:
            outward = goal - agent.home
        yaw = float(np.arctan2(outward[1], outward[0]))
        t = agent.clock
        for look in (yaw, yaw + np.pi):
            agent.turn_to(look)
            builder.add_frame(agent.observe())
        visits.append({
            "letter": frontier.letter,
            "frontier": [float(v) for v in point],
            "pose": [float(goal[0]), float(goal[1]), yaw],
            "t": [float(t), float(t + agent.dt)],
            "n_signs": len(atom.signs),
            "n_structures": len(atom.structures)
        })
        LOGGER.info(f"Visited frontier {frontier.letter} at ({point[0]:.2f}, {point[1]:.2f})")

    return builder.finalize(), visits
