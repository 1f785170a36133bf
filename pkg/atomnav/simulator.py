"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from PIL import Image
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

from .datasets import Detection, Frame, dequantize_depth, quantize_depth, write_sequence
from .errors import DataError, InvalidAgentPose, OracleMismatch, ParseError, SceneTooSimple
from .geometry import CameraIntrinsics, Pose3, Rigid2, camera_pose, project_points, unproject
from .grounding import FRONTIER, STRUCTURE, Selection, select_by_rule
from .mapbuilder import TAG_KEY
from .prompts import GROUNDING_MARKER, PARSE_MARKER, split_grounding_text
from .render import AtomRender, sign_frame
from .scenemodel import (INSTRUCTION_ORDER, Instruction, NavCue, NavCueSet, SignInstance, format_instruction_dict,
                         normalize_phrase)
from .signparsing import parse_vlm_reply
from .vlm import VlmRequest, VlmResponse

LOGGER = logging.getLogger(__name__)

# hit labels of the ray caster
NOTHING, GROUND, WALL = -1, 0, 1
SIGN_BASE, STRUCTURE_BASE = 100, 1000

MIN_STRUCTURE_PIXELS = 20
SCENE_COPY = "scene.json"
QUERIES_FILE = "queries.json"
APPROACH_DISTANCES = (5.0, 4.0, 3.0, 2.5)


@dataclass(frozen=True, eq=False)
class Branch:
    """Ground-truth path leaving the junction, `polyline` runs outward."""
    name: str
    polyline: np.ndarray
    entrance: np.ndarray

    def outward(self) -> float:
        d = self.polyline[-1] - self.polyline[0]
        return float(np.arctan2(d[1], d[0]))


@dataclass(frozen=True, eq=False)
class SceneSign:
    position: np.ndarray
    normal: np.ndarray
    size: Tuple[float, float]
    cues: NavCueSet
    tag: str

    def right(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0], 0.0])

    def corners(self) -> np.ndarray:
        w, h = self.size
        up = np.array([0.0, 0.0, 1.0])
        r = self.right()
        return np.array([self.position + sx * r * w / 2 + sz * up * h / 2
                         for sx, sz in [(-1, -1), (1, -1), (1, 1), (-1, 1)]])

    def instance(self, sign_id: int = 0) -> SignInstance:
        return SignInstance(sign_id, self.position, self.normal)


@dataclass(frozen=True, eq=False)
class SceneStructure:
    name: str
    class_label: str
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float
    height: float


@dataclass(frozen=True, eq=False)
class Occluder:
    start: np.ndarray
    end: np.ndarray
    height: float = 3.0


@dataclass(eq=False)
class SceneSpec:
    """Immutable synthetic scene: navigable ground on the z = 0 plane plus signs, structures and walls."""
    name: str
    ground: Polygon
    branches: List[Branch]
    signs: List[SceneSign]
    structures: List[SceneStructure] = field(default_factory=list)
    occluders: List[Occluder] = field(default_factory=list)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics.from_fov(640, 480, 90.0))
    camera_height: float = 1.2
    max_range: float = 7.0
    rng_seed: int = 0
    corruption: float = 0.0
    start: Optional[Tuple[float, float, float]] = None
    raw: Dict = field(default_factory=dict)

    def sign_by_tag(self, tag: str) -> SceneSign:
        for sign in self.signs:
            if sign.tag == tag:
                return sign
        raise KeyError(f"Scene {self.name} has no sign tagged '{tag}'")

    def is_navigable(self, x: float, y: float) -> bool:
        return bool(self.ground.covers(Point(x, y)))

    def n_elements(self) -> int:
        return len(self.branches) + len(self.structures)


@dataclass
class AgentState:
    """Level camera on a ground agent, yaw in radians from world +X."""
    x: float
    y: float
    yaw: float
    camera_height: float = 1.2

    def pose(self) -> Pose3:
        return camera_pose(self.x, self.y, self.yaw, self.camera_height)


def _rigid(data: Optional[Dict]) -> Rigid2:
    if not data:
        return Rigid2()
    t = data.get("translate", [0.0, 0.0])
    return Rigid2(np.deg2rad(float(data.get("yaw_deg", 0.0))), float(t[0]), float(t[1]))


def _xy(g: Rigid2, pts) -> np.ndarray:
    return g.apply(np.asarray(pts, dtype=np.float64).reshape(-1, 2))


def scene_from_dict(data: Dict) -> SceneSpec:
    """Build a scene from its JSON description, see docs/scene_format.md.

    Raises
    ------
    DataError
        If the description is incomplete or violates a scene invariant.
    """
    try:
        return _scene_from_dict(data)
    except (KeyError, TypeError, IndexError) as err:
        raise DataError(f"Invalid scene description: {err!r}")
    except ValueError as err:
        raise DataError(f"Invalid scene description: {err}")


def _scene_from_dict(data: Dict) -> SceneSpec:
    g = _rigid(data.get("transform"))
    name = str(data.get("name", "scene"))

    parts = []
    for corridor in data.get("corridors", []):
        line = LineString(_xy(g, corridor["polyline"]))
        parts.append(line.buffer(float(corridor["width"]) / 2, cap_style="flat", join_style="mitre"))
    for ring in data.get("ground", []):
        poly = Polygon(_xy(g, ring))
        if not poly.is_valid:
            raise ValueError(f"Ground polygon {ring} is not simple")
        parts.append(poly)
    if not parts:
        raise ValueError("Scene has no navigable ground")
    ground = unary_union(parts)

    branches = []
    for b in data.get("branches", []):
        entrance = _xy(g, b["entrance"])[0]
        if not ground.buffer(1e-6).covers(Point(entrance)):
            raise ValueError(f"Entrance of branch '{b['name']}' lies outside the navigable ground")
        branches.append(Branch(str(b["name"]), _xy(g, b["polyline"]), entrance))

    signs = []
    for i, s in enumerate(data.get("signs", [])):
        normal = np.asarray(s["normal"], dtype=np.float64)
        if abs(normal[2]) > 1e-6:
            raise ValueError(f"Sign {i} has a non-horizontal normal {normal.tolist()}")
        nxy = g.apply_vector(normal[:2])
        nxy = nxy / np.linalg.norm(nxy)
        pos = np.asarray(s["position"], dtype=np.float64)
        pxy = _xy(g, pos[:2])[0]
        cues = NavCueSet(tuple(NavCue(loc, Instruction(token)) for loc, token in s.get("cues", [])),
                         tuple(s.get("locational", [])))
        size = tuple(float(v) for v in s.get("size", [1.2, 0.6]))
        signs.append(SceneSign(np.array([pxy[0], pxy[1], pos[2]]), np.array([nxy[0], nxy[1], 0.0]), size, cues,
                               str(s.get("tag", f"sign-{i}"))))

    structures = []
    for i, s in enumerate(data.get("structures", [])):
        center = _xy(g, s["center"])[0]
        structures.append(SceneStructure(str(s.get("name", f"{s['class']}-{i}")), str(s["class"]), center,
                                         np.asarray(s["half_extents"], dtype=np.float64),
                                         np.deg2rad(float(s.get("yaw_deg", 0.0))) + g.theta,
                                         float(s.get("height", 2.5))))

    names = [b.name for b in branches] + [s.name for s in structures]
    if len(set(names)) != len(names):
        raise ValueError(f"Branch and structure names must be unique, got {names}")

    occluders = [Occluder(_xy(g, o["from"])[0], _xy(g, o["to"])[0], float(o.get("height", 3.0)))
                 for o in data.get("occluders", [])]

    cam = data.get("camera", {})
    intrinsics = CameraIntrinsics.from_fov(int(cam.get("width", 640)), int(cam.get("height", 480)),
                                           float(cam.get("hfov_deg", 90.0)))
    start = None
    if data.get("start") is not None:
        sx, sy, syaw = data["start"]
        pxy = _xy(g, [sx, sy])[0]
        start = (float(pxy[0]), float(pxy[1]), float(np.deg2rad(syaw) + g.theta))

    corruption = float(data.get("corruption", 0.0))
    if not 0.0 <= corruption <= 1.0:
        raise ValueError(f"Corruption probability {corruption} outside [0, 1]")
    return SceneSpec(name=name,
                     ground=ground,
                     branches=branches,
                     signs=signs,
                     structures=structures,
                     occluders=occluders,
                     intrinsics=intrinsics,
                     camera_height=float(cam.get("height_m", 1.2)),
                     max_range=float(cam.get("max_range", 7.0)),
                     rng_seed=int(data.get("rng_seed", 0)),
                     corruption=corruption,
                     start=start,
                     raw=data)


def load_scene(path: Path) -> SceneSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as err:
        raise DataError(f"Cannot read scene {path}: {err}")
    return scene_from_dict(data)


def _pixel_rays(K: CameraIntrinsics, pose: Pose3) -> np.ndarray:
    """World ray directions [H*W, 3] scaled so the ray parameter equals Z-depth."""
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return d_cam @ pose.matrix().T


def _hit_ground(o: np.ndarray, d: np.ndarray) -> np.ndarray:
    t = np.full(len(d), np.inf)
    down = d[:, 2] < -1e-12
    t[down] = -o[2] / d[down, 2]
    return t


def _hit_wall(o: np.ndarray, d: np.ndarray, wall: Occluder) -> np.ndarray:
    e = wall.end - wall.start
    w = wall.start - o[:2]
    denom = d[:, 0] * e[1] - d[:, 1] * e[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[0] * e[1] - w[1] * e[0]) / denom
        s = (w[0] * d[:, 1] - w[1] * d[:, 0]) / denom
        z = o[2] + t * d[:, 2]
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0) & (s <= 1) & (z >= 0) & (z <= wall.height)
    return np.where(hit, t, np.inf)


def _hit_sign(o: np.ndarray, d: np.ndarray, sign: SceneSign) -> Tuple[np.ndarray, np.ndarray]:
    """Ray parameter of the (two-sided) sign board and which hits see its front face."""
    dn = d @ sign.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((sign.position - o) @ sign.normal) / dn
        local = o + t[:, None] * d - sign.position
    w, h = sign.size
    hit = (np.abs(dn) > 1e-12) & (t > 1e-9) & (np.abs(local @ sign.right()) <= w / 2) & \
        (np.abs(local[:, 2]) <= h / 2)
    return np.where(hit, t, np.inf), hit & (dn < 0)


def _hit_structure(o: np.ndarray, d: np.ndarray, structure: SceneStructure) -> np.ndarray:
    # slab test in the box frame
    c, s = np.cos(structure.yaw), np.sin(structure.yaw)
    rot = np.array([[c, -s], [s, c]])
    o_local = np.array([*(rot.T @ (o[:2] - structure.center)), o[2]])
    d_local = np.concatenate([d[:, :2] @ rot, d[:, 2:]], axis=1)
    d_local = np.where(np.abs(d_local) < 1e-12, 1e-12, d_local)
    hx, hy = structure.half_extents
    lo = np.array([-hx, -hy, 0.0])
    hi = np.array([hx, hy, structure.height])
    t1 = (lo - o_local) / d_local
    t2 = (hi - o_local) / d_local
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_far >= t_near) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf)


def _face_area_px(sign: SceneSign, K: CameraIntrinsics, pose: Pose3) -> Optional[float]:
    uv, z = project_points(sign.corners(), K, pose)
    if np.any(z <= 0.05):
        return None
    return float(Polygon(uv).area)


def _cast(scene: SceneSpec, pose: Pose3) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[np.ndarray]]:
    """Z-depth (0 where invalid), hit labels, ray directions and per-sign front-face masks."""
    o = pose.translation
    d = _pixel_rays(scene.intrinsics, pose)
    best = np.full(len(d), np.inf)
    labels = np.full(len(d), NOTHING, dtype=np.int32)

    def update(t, code):
        closer = t < best
        best[closer] = t[closer]
        labels[closer] = code

    update(_hit_ground(o, d), GROUND)
    for wall in scene.occluders:
        update(_hit_wall(o, d, wall), WALL)
    faces = []
    for k, sign in enumerate(scene.signs):
        t, front = _hit_sign(o, d, sign)
        update(t, SIGN_BASE + k)
        faces.append(front)
    for k, structure in enumerate(scene.structures):
        update(_hit_structure(o, d, structure), STRUCTURE_BASE + k)

    valid = np.isfinite(best) & (best * np.linalg.norm(d, axis=1) <= scene.max_range)
    depth = np.where(valid, best, 0.0)
    labels[~np.isfinite(best)] = NOTHING
    return depth, labels, d, faces


def _observe(scene: SceneSpec, agent: AgentState, timestamp: float, index: int) -> Tuple[Frame, np.ndarray]:
    if not scene.is_navigable(agent.x, agent.y):
        raise InvalidAgentPose(index, f"({agent.x:.3f}, {agent.y:.3f}) in scene {scene.name}")
    K = scene.intrinsics
    pose = agent.pose()
    depth, labels, d, faces = _cast(scene, pose)
    valid = depth > 0

    path = (labels == GROUND) & valid
    idx = np.flatnonzero(path)
    hits = pose.translation + depth[idx, None] * d[idx]
    path[idx] = shapely.contains_xy(scene.ground, hits[:, 0], hits[:, 1])

    shape = (K.height, K.width)
    sign_masks, sign_tags = [], []
    for k, sign in enumerate(scene.signs):
        visible = (labels == SIGN_BASE + k) & valid & faces[k]
        n_visible = int(visible.sum())
        if n_visible == 0:
            continue
        area = _face_area_px(sign, K, pose)
        expected = area if area is not None else float(faces[k].sum())
        if n_visible >= 0.5 * expected:
            sign_masks.append(visible.reshape(shape))
            sign_tags.append(sign.tag)

    detections = []
    for k, structure in enumerate(scene.structures):
        mask = ((labels == STRUCTURE_BASE + k) & valid).reshape(shape)
        if mask.sum() < MIN_STRUCTURE_PIXELS:
            continue
        rows, cols = np.nonzero(mask)
        bbox = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
        detections.append(Detection(structure.class_label, bbox, 1.0, mask))

    frame = Frame(timestamp=float(timestamp),
                  pose=pose,
                  intrinsics=K,
                  depth=dequantize_depth(quantize_depth(depth.reshape(shape))),
                  path_mask=path.reshape(shape),
                  detections=detections,
                  sign_masks=sign_masks,
                  sign_tags=sign_tags)
    return frame, labels.reshape(shape)


def observe(scene: SceneSpec, agent: AgentState, timestamp: float = 0.0, index: int = 0) -> Frame:
    """Ray-cast one frame of perception output for an agent pose.

    Depth is the exact Z-depth quantized like the on-disk encoding, so frames survive a
    write/read round trip unchanged. Ground farther than `max_range` has no depth.

    Raises
    ------
    InvalidAgentPose
        If the agent stands outside the navigable ground. `index` is reported with it.
    """
    return _observe(scene, agent, timestamp, index)[0]


AgentLike = Union[AgentState, Sequence[float]]


def _as_agent(scene: SceneSpec, pose: AgentLike) -> AgentState:
    if isinstance(pose, AgentState):
        return pose
    x, y, yaw = pose
    return AgentState(float(x), float(y), float(yaw), scene.camera_height)


def approach_poses(scene: SceneSpec, sign: SceneSign) -> List[Tuple[float, float, float]]:
    """Navigable head-on poses in front of a sign, farthest first."""
    n = sign.normal[:2]
    facing = float(np.arctan2(-n[1], -n[0]))
    poses = []
    for dist in APPROACH_DISTANCES:
        x, y = sign.position[:2] + dist * n
        if scene.is_navigable(x, y):
            poses.append((float(x), float(y), facing))
    return poses


def scan_pose(scene: SceneSpec) -> Tuple[float, float, float]:
    """Where the agent scans in place: the scene's start pose, else the closest approach pose."""
    if scene.start is not None:
        return scene.start
    poses = approach_poses(scene, scene.signs[0]) if scene.signs else []
    if not poses:
        raise DataError(f"Scene {scene.name} has no valid approach pose and no start pose")
    return poses[-1]


def default_trajectory(scene: SceneSpec, n_scan: int = 12) -> List[Tuple[float, float, float]]:
    """Approach every sign head-on, scan in place and look both ways at every branch
    entrance. Poses are (x, y, yaw) with yaw in radians."""
    poses = [pose for sign in scene.signs for pose in approach_poses(scene, sign)]
    x, y, yaw0 = scan_pose(scene)
    poses += [(x, y, float(yaw0 + 2 * np.pi * (i + 1) / n_scan)) for i in range(n_scan)]
    for branch in scene.branches:
        ex, ey = branch.entrance
        out = branch.outward()
        poses += [(float(ex), float(ey), out), (float(ex), float(ey), out + np.pi)]
    return poses


def load_trajectory(path: Path) -> List[Tuple[float, float, float]]:
    """Trajectory file: a JSON list of [x, y, yaw_deg]."""
    try:
        data = json.loads(Path(path).read_text())
        return [(float(x), float(y), float(np.deg2rad(yaw))) for x, y, yaw in data]
    except (OSError, ValueError, TypeError) as err:
        raise DataError(f"Invalid trajectory file {path}: {err}")


def _emit(scene: SceneSpec, trajectory: Sequence[AgentLike], dt: float) -> Tuple[List[Frame], List[np.ndarray]]:
    frames, labels = [], []
    for i, pose in enumerate(trajectory):
        frame, lab = _observe(scene, _as_agent(scene, pose), i * dt, i)
        frames.append(frame)
        labels.append(lab)
    return frames, labels


def _write_scene_copy(scene: SceneSpec, out_dir: Path):
    (Path(out_dir) / SCENE_COPY).write_text(json.dumps(scene.raw, sort_keys=True, indent=4))


def emit_sequence(scene: SceneSpec, trajectory: Sequence[AgentLike], out_dir: Path, dt: float = 1.0) -> Path:
    """Write the frames observed along `trajectory` as a recorded sequence.

    The scene description is copied next to the manifest, so the oracle VLM can be
    pointed at the sequence directory later.
    """
    frames, _ = _emit(scene, trajectory, dt)
    manifest = write_sequence(frames, out_dir)
    _write_scene_copy(scene, out_dir)
    LOGGER.info(f"Wrote {len(frames)} frames of scene {scene.name} to {out_dir}")
    return manifest


def true_candidates(scene: SceneSpec, frame: Rigid2) -> List[Selection]:
    """Branch entrances and structure centers of the scene in a sign frame."""
    out = [Selection(FRONTIER, b.name, frame.apply(b.entrance)) for b in scene.branches]
    out += [Selection(STRUCTURE, s.name, frame.apply(s.center), s.class_label) for s in scene.structures]
    return out


def _nearest_render_element(render_: AtomRender, truth: Selection) -> Optional[str]:
    if truth.kind == FRONTIER:
        pool = [(f.letter, f.point) for f in render_.frontiers]
    else:
        pool = [(b.label, b.center) for b in render_.boxes if b.class_label == truth.class_label]
        pool = pool or [(b.label, b.center) for b in render_.boxes]
    if not pool:
        pool = [(f.letter, f.point) for f in render_.frontiers] + [(b.label, b.center) for b in render_.boxes]
    if not pool:
        return None
    return min(pool, key=lambda kv: (float(np.linalg.norm(kv[1] - truth.point)), kv[0]))[0]


class OracleVlm:
    """VLM stand-in answering from scene ground truth.

    Parse requests are answered with the true cues of the tagged sign, each cue replaced
    by a random other instruction with probability `corruption`. Grounding requests apply
    the geometric selection rule to the true branch entrances and structures and name the
    render element nearest to the chosen one.
    """

    def __init__(self, scene: SceneSpec, corruption: Optional[float] = None, seed: Optional[int] = None):
        self.scene = scene
        self.corruption = scene.corruption if corruption is None else corruption
        self.seed = scene.rng_seed if seed is None else seed

    def chat(self, request: VlmRequest) -> VlmResponse:
        texts = request.texts()
        if any(PARSE_MARKER in text for text in texts):
            return self._parse(request)
        if any(GROUNDING_MARKER in text for text in texts):
            return self._ground(request)
        raise OracleMismatch("Request is neither a sign parse nor a grounding request")

    def corrupt(self, cues: NavCueSet, digest: str) -> NavCueSet:
        if self.corruption <= 0:
            return cues
        rng = np.random.default_rng([self.seed, int(digest[:12], 16)])
        out = []
        for cue in cues.cues:
            if rng.random() < self.corruption:
                others = [t for t in INSTRUCTION_ORDER if not t.is_locational and t != cue.instruction]
                out.append(NavCue(cue.location, others[int(rng.integers(len(others)))]))
            else:
                out.append(cue)
        return NavCueSet(tuple(out), cues.locational)

    def _parse(self, request: VlmRequest) -> VlmResponse:
        images = request.images()
        if not images:
            raise OracleMismatch("Parse request carries no sign image")
        try:
            with Image.open(io.BytesIO(images[-1])) as img:
                tag = img.text.get(TAG_KEY)
        except OSError as err:
            raise OracleMismatch(f"Sign image cannot be decoded: {err}")
        if tag is None:
            raise OracleMismatch("Sign image carries no tag")
        try:
            sign = self.scene.sign_by_tag(tag)
        except KeyError as err:
            raise OracleMismatch(str(err))
        return VlmResponse(format_instruction_dict(self.corrupt(sign.cues, request.digest())))

    def _ground(self, request: VlmRequest) -> VlmResponse:
        images = request.images()
        if not images:
            raise OracleMismatch("Grounding request carries no render")
        try:
            render_ = AtomRender.from_png(images[0])
        except ParseError as err:
            raise OracleMismatch(f"Render cannot be decoded: {err}")
        parts = [split_grounding_text(text) for text in request.texts()]
        parts = [p for p in parts if p is not None]
        if not parts:
            raise OracleMismatch("Grounding text does not follow the grounding prompt")
        location, parsing = parts[0]
        cues = parse_vlm_reply(parsing).cues
        matching = [c for c in cues if c.location == normalize_phrase(location)] or list(cues)
        if not matching:
            raise OracleMismatch(f"Grounding request for '{location}' has no instruction")

        truth = select_by_rule(true_candidates(self.scene, render_.frame), matching[0].instruction)
        key = _nearest_render_element(render_, truth)
        return VlmResponse(f"[{key}]" if key is not None else "[]")


@dataclass(frozen=True, eq=False)
class _Element:
    name: str
    kind: str
    point: np.ndarray
    code: int


def _elements(scene: SceneSpec) -> List[_Element]:
    out = [_Element(b.name, FRONTIER, np.array([b.entrance[0], b.entrance[1], 0.0]), GROUND) for b in scene.branches]
    out += [
        _Element(s.name, STRUCTURE, np.array([s.center[0], s.center[1], s.height / 2]), STRUCTURE_BASE + k)
        for k, s in enumerate(scene.structures)
    ]
    return out


def _find_view(element: _Element, frames: List[Frame], labels: List[np.ndarray]) -> Optional[Tuple[float, Tuple]]:
    """First frame whose pixel of the element sees the element itself with valid depth."""
    for frame, lab in zip(frames, labels):
        K = frame.intrinsics
        uv, z = project_points(element.point.reshape(1, 3), K, frame.pose)
        if z[0] <= 0:
            continue
        col, row = int(round(uv[0, 0])), int(round(uv[0, 1]))
        if not K.contains(col, row) or lab[row, col] != element.code or frame.depth[row, col] <= 0:
            continue
        if element.kind == FRONTIER:
            hit = unproject((col, row), float(frame.depth[row, col]), K, frame.pose)
            if np.linalg.norm(hit - element.point) > 0.1:
                continue
        return frame.timestamp, (float(col), float(row))
    return None


def make_benchmark(scene: SceneSpec, seed: int, out_dir: Path, n_queries: int = 3,
                   dt: float = 1.0) -> Tuple[Path, List[Dict]]:
    """Emit the default-trajectory sequence of a scene plus multiple-choice grounding queries.

    Every query names a cue location; its four choices are pixels of the true element and
    three distractors, each in the first frame that sees it.

    Raises
    ------
    SceneTooSimple
        If fewer than 4 groundable elements are visible or no cue grounds to a visible one.
    """
    out_dir = Path(out_dir)
    frames, labels = _emit(scene, default_trajectory(scene), dt)

    views = {}
    for element in _elements(scene):
        view = _find_view(element, frames, labels)
        if view is not None:
            views[element.name] = view
    if len(views) < 4:
        raise SceneTooSimple(f"Scene {scene.name} shows only {len(views)} groundable elements, need 4")

    usable = []
    for sign in scene.signs:
        candidates = true_candidates(scene, sign_frame(sign.instance()))
        for cue in sign.cues.cues:
            truth = select_by_rule(candidates, cue.instruction)
            if truth.key in views:
                usable.append((cue, truth.key))
    if not usable:
        raise SceneTooSimple(f"No cue of scene {scene.name} grounds to a visible element")

    rng = np.random.default_rng(seed)
    order = []
    while len(order) < n_queries:
        order += [int(i) for i in rng.permutation(len(usable))]
    queries = []
    for i in order[:n_queries]:
        cue, truth = usable[i]
        others = sorted(name for name in views if name != truth)
        picked = [others[int(j)] for j in rng.choice(len(others), size=3, replace=False)]
        names = [truth] + picked
        names = [names[int(j)] for j in rng.permutation(4)]
        ids = "ABCD"
        queries.append({
            "query": cue.location,
            "frame_t": views[truth][0],
            "choices": [{"id": ids[j], "t": views[name][0], "px": list(views[name][1])} for j, name in enumerate(names)],
            "truth": ids[names.index(truth)],
            "truth_element": truth,
            "truth_instruction": cue.instruction.value
        })

    write_sequence(frames, out_dir)
    _write_scene_copy(scene, out_dir)
    path = out_dir / QUERIES_FILE
    path.write_text(json.dumps(queries, sort_keys=True, indent=1))
    LOGGER.info(f"Wrote {len(queries)} queries for scene {scene.name} to {path}")
    return path, queries
