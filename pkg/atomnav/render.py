"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io
import json
import logging
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Circle
from matplotlib.patches import Polygon as PolygonPatch
from PIL import Image
from scipy import ndimage
from shapely.geometry import LinearRing, MultiPolygon, Polygon
from shapely.geometry.polygon import orient

from .errors import AmbiguousFrame, EmptyScene, ParseError
from .geometry import HALF_PI, PointCloud3, Rigid2
from .scenemodel import AtomMap, SignInstance
from .utils import canonical_dumps, config_from_dict

LOGGER = logging.getLogger(__name__)

RENDER_VERSION = 1
SIDECAR_KEY = "atomnav:sidecar"
LETTERS = string.ascii_uppercase

CONVEX, NEUTRAL, REFLEX = 1, 0, -1


@dataclass(frozen=True)
class RenderConfig:
    cell: float = 0.10
    simplify_eps: float = 0.30
    reflex_eps: float = 0.087
    min_protrusion_len: float = 0.6
    radius: float = 12.0
    image_px: int = 1024
    split_turn: float = 1.25 * np.pi
    sign_adjacent_dist: float = 2.0
    min_points: int = 100
    min_confidence: float = 0.0
    align_to_sign: bool = True

    def __post_init__(self):
        for name in ["cell", "simplify_eps", "reflex_eps", "min_protrusion_len", "radius", "split_turn",
                     "sign_adjacent_dist"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"RenderConfig.{name} must be positive, got {getattr(self, name)}")
        if self.image_px < 256:
            raise ValueError(f"RenderConfig.image_px must be at least 256, got {self.image_px}")

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "RenderConfig":
        return config_from_dict(cls, data)


@dataclass(frozen=True, eq=False)
class Frontier:
    letter: str
    point: np.ndarray
    run: Tuple[float, float]

    def to_dict(self) -> Dict:
        return {
            "letter": self.letter,
            "point": [float(v) for v in self.point],
            "run": [float(self.run[0]), float(self.run[1])]
        }


@dataclass(frozen=True, eq=False)
class RenderBox:
    """Structure footprint in the sign frame, yaw normalized to [0, pi/2)."""
    label: str
    class_label: str
    id: int
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float

    def corners(self) -> np.ndarray:
        hx, hy = self.half_extents
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return Rigid2(self.yaw, self.center[0], self.center[1]).apply(local)

    def to_dict(self) -> Dict:
        return {
            "label": self.label,
            "class": self.class_label,
            "id": int(self.id),
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
            "yaw": float(self.yaw),
            "corners": [[float(x), float(y)] for x, y in self.corners()]
        }


@dataclass(eq=False)
class AtomRender:
    center_sign_id: int
    frame: Rigid2
    polygon: np.ndarray
    frontiers: List[Frontier]
    boxes: List[RenderBox]
    image: bytes = b""
    sidecar: Dict = field(default_factory=dict)

    def frontier(self, letter: str) -> Frontier:
        for frontier in self.frontiers:
            if frontier.letter == letter:
                return frontier
        raise KeyError(f"No frontier '{letter}'")

    def box(self, label: str) -> RenderBox:
        for box in self.boxes:
            if box.label == label:
                return box
        raise KeyError(f"No box '{label}'")

    @classmethod
    def from_sidecar(cls, sidecar: Dict, image: bytes = b"") -> "AtomRender":
        try:
            frontiers = [Frontier(f["letter"], np.array(f["point"]), tuple(f["run"])) for f in sidecar["frontiers"]]
            boxes = [
                RenderBox(b["label"], b["class"], int(b["id"]), np.array(b["center"]), np.array(b["half_extents"]),
                          float(b["yaw"])) for b in sidecar["boxes"]
            ]
            return cls(int(sidecar["center_sign_id"]), Rigid2.from_dict(sidecar["frame"]),
                       np.array(sidecar["polygon"]).reshape(-1, 2), frontiers, boxes, image, sidecar)
        except (KeyError, TypeError, ValueError) as err:
            raise ParseError(f"Invalid render sidecar: {err!r}")

    @classmethod
    def from_png(cls, image: bytes) -> "AtomRender":
        """Recover a render from its PNG, which carries the sidecar as text metadata."""
        try:
            with Image.open(io.BytesIO(image)) as img:
                text = img.text.get(SIDECAR_KEY)
        except OSError as err:
            raise ParseError(f"Render image cannot be decoded: {err}")
        if text is None:
            raise ParseError(f"Render image has no '{SIDECAR_KEY}' metadata")
        return cls.from_sidecar(json.loads(text), image)


def sign_frame(sign: SignInstance, align: bool = True) -> Rigid2:
    """Planar transform from world into the sign-centric frame.

    The origin is the sign centroid and +Y is the reader's viewing direction, the
    horizontal part of -normal. With `align` False the world axes are kept.

    Raises
    ------
    AmbiguousFrame
        If the sign normal is close to vertical.
    """
    n = sign.normal
    if abs(n[2]) >= 0.95:
        raise AmbiguousFrame(f"Sign {sign.id} has a near-vertical normal {n.tolist()}")
    origin = sign.centroid[:2]
    if not align:
        return Rigid2(0.0, -float(origin[0]), -float(origin[1]))
    fwd = -n[:2] / np.linalg.norm(n[:2])
    theta = float(np.arctan2(fwd[0], fwd[1]))
    t = -Rigid2(theta).apply(origin)
    return Rigid2(theta, float(t[0]), float(t[1]))


def _outer_border(mask: np.ndarray) -> np.ndarray:
    """Outer border pixels (row, col) of the largest 8-connected blob of a binary mask."""
    contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        return np.zeros((0, 2), dtype=np.int64)
    contour = max(contours, key=lambda c: (cv2.contourArea(c), len(c)))
    return contour.reshape(-1, 2)[:, ::-1].astype(np.int64)


def _largest_polygon(geom) -> Polygon:
    if isinstance(geom, MultiPolygon):
        geom = max(geom.geoms, key=lambda g: g.area)
    if not isinstance(geom, Polygon) or geom.is_empty:
        return Polygon()
    return Polygon(geom.exterior)


def extract_polygon(path_cloud: PointCloud3, frame: Rigid2, cfg: RenderConfig) -> np.ndarray:
    """Simplified outer contour of the path region around the sign, in the sign frame.

    Parameters
    ----------
    path_cloud : PointCloud3
        Accumulated ground points in world coordinates.
    frame : Rigid2
        World to sign frame transform.
    cfg : RenderConfig
        Grid cell size, window radius and simplification tolerance.

    Returns
    -------
    np.ndarray
        Vertices [K, 2], counter-clockwise, starting at the vertex with the smallest (y, x).

    Raises
    ------
    EmptyScene
        If fewer than `cfg.min_points` points fall into the window or no area survives.
    """
    xy = frame.apply(path_cloud.points[:, :2]) if len(path_cloud) else np.zeros((0, 2))
    xy = xy[np.all(np.abs(xy) <= cfg.radius, axis=1)]
    if len(xy) < cfg.min_points:
        raise EmptyScene(f"Only {len(xy)} path points within {cfg.radius} m of the sign "
                         f"(need {cfg.min_points})")

    pad = 2
    n_cells = int(np.ceil(2 * cfg.radius / cfg.cell))
    idx = np.clip(np.floor((xy + cfg.radius) / cfg.cell).astype(np.int64), 0, n_cells - 1) + pad
    grid = np.zeros((n_cells + 2 * pad, n_cells + 2 * pad), dtype=bool)
    grid[idx[:, 1], idx[:, 0]] = True
    grid = ndimage.binary_closing(grid, structure=np.ones((3, 3), dtype=bool))

    labels, n_labels = ndimage.label(grid, structure=np.ones((3, 3), dtype=bool))
    if n_labels == 0:
        raise EmptyScene("Path grid is empty after closing")
    rows, cols = np.nonzero(labels)
    centers = np.stack([(cols - pad + 0.5) * cfg.cell - cfg.radius, (rows - pad + 0.5) * cfg.cell - cfg.radius],
                       axis=1)
    dist = np.linalg.norm(centers, axis=1)
    nearest = int(np.argmin(dist))
    if dist[nearest] <= cfg.sign_adjacent_dist:
        component = labels[rows[nearest], cols[nearest]]
    else:
        sizes = np.bincount(labels.reshape(-1))[1:]
        component = int(np.argmax(sizes)) + 1

    trace = _outer_border((labels == component).astype(np.uint8))
    coords = np.stack([(trace[:, 1] - pad + 0.5) * cfg.cell - cfg.radius,
                       (trace[:, 0] - pad + 0.5) * cfg.cell - cfg.radius], axis=1)
    if len(coords) < 3:
        raise EmptyScene("Path region is too thin to form a polygon")

    poly = Polygon(coords)
    if not poly.is_valid:
        poly = _largest_polygon(poly.buffer(0))
    poly = _largest_polygon(poly.simplify(cfg.simplify_eps, preserve_topology=True))
    if poly.is_empty or poly.area <= 0:
        raise EmptyScene("Path polygon has no area")
    ring = np.array(orient(poly, sign=1.0).exterior.coords)[:-1]
    start = int(np.lexsort((ring[:, 0], ring[:, 1]))[0])
    return np.roll(ring, -start, axis=0)


def vertex_turns(polygon: np.ndarray) -> np.ndarray:
    """Signed turning angle at every vertex of a closed polygon."""
    e_in = polygon - np.roll(polygon, 1, axis=0)
    e_out = np.roll(polygon, -1, axis=0) - polygon
    cross = e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0]
    dot = np.sum(e_in * e_out, axis=1)
    return np.arctan2(cross, dot)


def classify_vertices(polygon: np.ndarray, reflex_eps: float) -> np.ndarray:
    """+1 convex, -1 reflex, 0 neutral for each vertex of a counter-clockwise polygon."""
    turns = vertex_turns(polygon)
    labels = np.zeros(len(polygon), dtype=np.int64)
    labels[turns > reflex_eps] = CONVEX
    labels[turns < -reflex_eps] = REFLEX
    return labels


def protrusion_runs(labels: np.ndarray, turns: np.ndarray, split_turn: float) -> List[List[int]]:
    """Maximal runs of non-reflex vertices holding at least one convex vertex.

    Runs bounded by reflex vertices are split before the vertex that would take their
    accumulated turn beyond `split_turn`. Without reflex vertices the whole boundary is
    one run starting at vertex 0.
    """
    n = len(labels)
    reflex = np.flatnonzero(labels == REFLEX)
    if len(reflex) == 0:
        return [list(range(n))] if np.any(labels == CONVEX) else []

    runs = []
    start = int(reflex[0])
    current, acc = [], 0.0
    for step in range(1, n + 1):
        i = (start + step) % n
        if labels[i] == REFLEX:
            if current:
                runs.append(current)
            current, acc = [], 0.0
            continue
        if current and acc + turns[i] > split_turn:
            runs.append(current)
            current, acc = [], 0.0
        current.append(i)
        acc += turns[i]
    return [run for run in runs if np.any(labels[run] == CONVEX)]


def _letter_key(point: np.ndarray) -> Tuple[float, float]:
    angle = float(np.arctan2(point[0], point[1]))
    if angle <= -np.pi + 1e-12:
        angle = np.pi
    return angle, float(np.linalg.norm(point))


def find_frontiers(polygon: np.ndarray, cfg: RenderConfig) -> List[Frontier]:
    """Lettered frontier points at the arc-length midpoints of the polygon's convex protrusions.

    Letters run clockwise starting behind the reader, so paths to the left come before paths ahead.
    """
    polygon = np.asarray(polygon, dtype=np.float64)
    n = len(polygon)
    if n < 3:
        return []
    turns = vertex_turns(polygon)
    labels = classify_vertices(polygon, cfg.reflex_eps)
    edges = np.linalg.norm(np.roll(polygon, -1, axis=0) - polygon, axis=1)
    offsets = np.concatenate([[0.0], np.cumsum(edges)[:-1]])
    perimeter = float(edges.sum())
    ring = LinearRing(polygon)

    candidates = []
    for run in protrusion_runs(labels, turns, cfg.split_turn):
        first, last = run[0], run[-1]
        if len(run) == n:
            begin, length = (offsets[first] - edges[(first - 1) % n] / 2) % perimeter, perimeter
        else:
            begin = (offsets[first] - edges[(first - 1) % n] / 2) % perimeter
            end = (offsets[last] + edges[last] / 2) % perimeter
            length = (end - begin) % perimeter
        if length < cfg.min_protrusion_len:
            continue
        mid = (begin + length / 2) % perimeter
        point = np.array(ring.interpolate(mid).coords[0])
        candidates.append((point, (float(begin), float((begin + length) % perimeter))))

    candidates.sort(key=lambda c: _letter_key(c[0]))
    return [Frontier(LETTERS[i % 26] * (1 + i // 26), point, run) for i, (point, run) in enumerate(candidates)]


def _normalized_box(half: np.ndarray, yaw: float) -> Tuple[np.ndarray, float]:
    quarter = int(np.floor(yaw / HALF_PI))
    yaw = yaw - quarter * HALF_PI
    if quarter % 2:
        half = half[::-1]
    if yaw >= HALF_PI - 1e-9:
        yaw -= HALF_PI
        half = half[::-1]
    return np.array(half, dtype=np.float64), float(yaw)


def project_structures(atom: AtomMap, frame: Rigid2, cfg: RenderConfig) -> List[RenderBox]:
    boxes = []
    for structure in atom.structures:
        if structure.confidence < cfg.min_confidence:
            continue
        box = structure.box.transformed(frame)
        center = box.center[:2]
        if np.any(np.abs(center) > cfg.radius):
            continue
        half, yaw = _normalized_box(box.half_extents[:2], box.yaw)
        boxes.append(RenderBox(f"{structure.class_label} #{structure.id}", structure.class_label, structure.id,
                               center, half, yaw))
    return boxes


def _draw(polygon: np.ndarray, frontiers: List[Frontier], boxes: List[RenderBox], cfg: RenderConfig,
          sidecar_text: str) -> bytes:
    size = cfg.image_px / 100
    fig = Figure(figsize=(size, size), dpi=100, facecolor="white")
    canvas = FigureCanvasAgg(fig)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_xlim(-cfg.radius, cfg.radius)
    ax.set_ylim(-cfg.radius, cfg.radius)
    ax.set_aspect("equal")
    ax.axis("off")

    ax.add_patch(PolygonPatch(polygon, closed=True, facecolor="#d9d9d9", edgecolor="black", lw=2))
    scale = cfg.radius / 12.0
    for box in boxes:
        ax.add_patch(PolygonPatch(box.corners(), closed=True, fill=False, edgecolor="tab:blue", lw=2))
        ax.text(box.center[0], box.center[1], box.label, ha="center", va="center", fontsize=11, color="tab:blue")
    for frontier in frontiers:
        x, y = frontier.point
        ax.add_patch(Circle((x, y), 0.45 * scale, facecolor="white", edgecolor="black", lw=1.5, zorder=3))
        ax.text(x, y, frontier.letter, ha="center", va="center", fontsize=13, fontweight="bold", zorder=4)

    buf = io.BytesIO()
    canvas.print_png(buf, metadata={"Software": None, SIDECAR_KEY: sidecar_text})
    return buf.getvalue()


def render(atom: AtomMap, sign_id: int, cfg: RenderConfig = None) -> AtomRender:
    """Sign-centric abstract top view of the map around one sign.

    Raises
    ------
    AmbiguousFrame
        If the sign normal is near vertical.
    EmptyScene
        If there are not enough path points around the sign.
    """
    cfg = cfg or RenderConfig()
    sign = atom.sign(sign_id)
    frame = sign_frame(sign, cfg.align_to_sign)
    polygon = extract_polygon(atom.path_cloud, frame, cfg)
    frontiers = find_frontiers(polygon, cfg)
    boxes = project_structures(atom, frame, cfg)

    sidecar = {
        "render_version": RENDER_VERSION,
        "center_sign_id": int(sign_id),
        "frame": frame.to_dict(),
        "radius": float(cfg.radius),
        "cell": float(cfg.cell),
        "image_px": int(cfg.image_px),
        "polygon": [[float(x), float(y)] for x, y in polygon],
        "frontiers": [f.to_dict() for f in frontiers],
        "boxes": [b.to_dict() for b in boxes]
    }
    LOGGER.debug(f"Rendered sign {sign_id}: {len(polygon)} vertices, {len(frontiers)} frontiers, "
                 f"{len(boxes)} boxes")
    image = _draw(polygon, frontiers, boxes, cfg, canonical_dumps(sidecar))
    return AtomRender(int(sign_id), frame, polygon, frontiers, boxes, image, sidecar)
