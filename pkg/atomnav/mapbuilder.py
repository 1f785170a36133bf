"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io
import logging
import sys
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo
from scipy.optimize import linear_sum_assignment
from tqdm import tqdm

from .datasets import Frame
from .errors import DegenerateCloud, InsufficientDepth, UnparseableReply
from .geometry import PointCloud3, Pose3, fit_oriented_box, unproject_depth, voxel_downsample
from .scenemodel import AtomMap, NavCueSet, ParseRecord, SignInstance, StructureInstance
from .signparsing import build_parse_request, merge_cues, parse_vlm_reply
from .symbols import SymbolDictionary, load_symbol_dictionary
from .utils import config_from_dict

LOGGER = logging.getLogger(__name__)

MIN_SIGN_PIXELS = 50
TAG_KEY = "atomnav:tag"

# finite stand-in for gated pairs, linear_sum_assignment rejects infeasible inf matrices
_GATED = 1e9


@dataclass(frozen=True)
class BuilderConfig:
    tau_dist: float = 3.5
    tau_angle: float = 30.0
    sign_cluster_dist: float = 0.5
    sign_cluster_angle: float = 20.0
    assoc_gate: float = 1.0
    ground_band: float = 0.5
    voxel: float = 0.05
    structure_vocab: Tuple[str, ...] = ("stairs", "escalator", "lift", "door")
    score_thresholds: Dict[str, float] = field(default_factory=dict)
    default_score_threshold: float = 0.35
    min_sign_pixels: int = MIN_SIGN_PIXELS
    bbox_depth_band: float = 0.75
    floor_eps: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "structure_vocab", tuple(self.structure_vocab))
        for name in ["tau_dist", "tau_angle", "sign_cluster_dist", "sign_cluster_angle", "assoc_gate",
                     "ground_band", "voxel", "bbox_depth_band"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"BuilderConfig.{name} must be positive, got {getattr(self, name)}")
        for name in ["tau_angle", "sign_cluster_angle"]:
            if not 0 < getattr(self, name) < 90:
                raise ValueError(f"BuilderConfig.{name} must lie in (0, 90) degrees")
        for label, threshold in self.score_thresholds.items():
            if not 0.0 <= threshold <= 1.0:
                raise ValueError(f"Score threshold for '{label}' outside [0, 1]: {threshold}")

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "BuilderConfig":
        return config_from_dict(cls, data)

    def score_threshold(self, class_label: str) -> float:
        return self.score_thresholds.get(class_label, self.default_score_threshold)


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def estimate_sign_geometry(frame: Frame, mask_index: int,
                           min_pixels: int = MIN_SIGN_PIXELS) -> Tuple[np.ndarray, np.ndarray]:
    """Centroid and camera-facing plane normal of one sign mask, in world coordinates.

    Raises
    ------
    InsufficientDepth
        If fewer than `min_pixels` mask pixels have valid depth.
    """
    points, _ = unproject_depth(frame.depth, frame.intrinsics, frame.pose, frame.sign_masks[mask_index])
    if len(points) < min_pixels:
        raise InsufficientDepth(f"Sign mask {mask_index} at t={frame.timestamp} has only {len(points)} "
                                f"pixels with valid depth (need {min_pixels})")
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[2] / np.linalg.norm(vt[2])
    if np.dot(normal, centroid - frame.pose.translation) > 0:
        normal = -normal
    return centroid, normal


def cluster_sign(atom: AtomMap, centroid: np.ndarray, normal: np.ndarray, cfg: BuilderConfig) -> int:
    """Assign a sign observation to the nearest compatible sign, or start a new one.

    A match updates centroid and normal by running mean and counts the observation.
    """
    best_id, best_dist = None, np.inf
    for sign in atom.signs:
        dist = float(np.linalg.norm(sign.centroid - centroid))
        if dist > cfg.sign_cluster_dist + 1e-9:
            continue
        if _angle_deg(sign.normal, normal) > cfg.sign_cluster_angle + 1e-9:
            continue
        if dist < best_dist:
            best_id, best_dist = sign.id, dist

    if best_id is None:
        new_id = len(atom.signs)
        atom.signs.append(SignInstance(new_id, centroid, normal))
        return new_id

    sign = atom.sign(best_id)
    n = sign.observation_count
    sign.centroid = (sign.centroid * n + centroid) / (n + 1)
    mean_normal = sign.normal * n + normal
    sign.normal = mean_normal / np.linalg.norm(mean_normal)
    sign.observation_count = n + 1
    return best_id


def viewpoint_geometry(pose: Pose3, sign: SignInstance) -> Tuple[float, float]:
    """Planar distance to the sign and angle between viewing direction and -normal."""
    dist = float(np.linalg.norm(pose.translation[:2] - sign.centroid[:2]))
    return dist, _angle_deg(pose.forward(), -sign.normal)


def viewpoint_suitable(pose: Pose3, sign: SignInstance, cfg: BuilderConfig) -> bool:
    """Closed distance and alignment gates deciding whether a view of a sign is worth parsing."""
    dist, angle = viewpoint_geometry(pose, sign)
    return dist <= cfg.tau_dist + 1e-9 and angle <= cfg.tau_angle + 1e-9


def optimal_assignment(cost: np.ndarray, gate: float = np.inf) -> List[Tuple[int, int]]:
    """Minimum-cost matching of rows to columns, pairs with cost above `gate` excluded.

    Parameters
    ----------
    cost : np.ndarray
        Cost matrix [rows, columns], np.inf marks forbidden pairs.
    gate : float, optional
        Largest admissible cost.

    Returns
    -------
    List[Tuple[int, int]]
        Matched (row, column) pairs in row order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    allowed = np.isfinite(cost) & (cost <= gate)
    padded = np.where(allowed, cost, _GATED)
    rows, cols = linear_sum_assignment(padded)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]


def associate_structures(structures: List[StructureInstance],
                         detections: List[Tuple[str, PointCloud3, float]],
                         cfg: BuilderConfig,
                         anchor: Optional[Tuple[float, float, float]] = None) -> List[Tuple[int, int]]:
    """Fuse one frame's 3D structure detections into the map's structures.

    Costs are centroid distances, gated by class equality and `cfg.assoc_gate`. Matched
    structures merge clouds, get voxel-downsampled and refit. Unmatched detections become
    new instances. `structures` is updated in place.

    Returns
    -------
    List[Tuple[int, int]]
        (detection index, structure id) for every detection that ended up in the map.
    """
    if not detections:
        return []
    cost = np.full((len(detections), len(structures)), np.inf)
    for i, (label, cloud, _) in enumerate(detections):
        centroid = cloud.centroid()
        for j, structure in enumerate(structures):
            if structure.class_label == label:
                cost[i, j] = float(np.linalg.norm(structure.fused_cloud.centroid() - centroid))
    matches = dict(optimal_assignment(cost, cfg.assoc_gate))

    result = []
    next_id = max([s.id for s in structures], default=-1) + 1
    for i, (label, cloud, score) in enumerate(detections):
        if i in matches:
            j = matches[i]
            old = structures[j]
            merged = voxel_downsample(np.concatenate([old.fused_cloud.points, cloud.points]), cfg.voxel, anchor)
            try:
                box = fit_oriented_box(PointCloud3(merged))
            except DegenerateCloud as err:
                LOGGER.warning(f"Keeping previous box of {old.class_label} #{old.id}: {err}")
                box = old.box
            n = old.n_detections
            structures[j] = StructureInstance(old.id, old.class_label, box, (old.confidence * n + score) / (n + 1),
                                              PointCloud3(merged), n + 1)
            result.append((i, old.id))
        else:
            try:
                box = fit_oriented_box(cloud)
            except DegenerateCloud as err:
                LOGGER.warning(f"Skipping {label} detection: {err}")
                continue
            structures.append(StructureInstance(next_id, label, box, float(score), cloud, 1))
            result.append((i, next_id))
            next_id += 1
    return result


def accumulate_path(atom: AtomMap, frame: Frame, cfg: BuilderConfig) -> AtomMap:
    """Add the frame's ground pixels to the path cloud and voxel-downsample it."""
    points, _ = unproject_depth(frame.depth, frame.intrinsics, frame.pose, frame.path_mask)
    points = points[np.abs(points[:, 2]) <= cfg.ground_band]
    if len(points) == 0:
        return atom
    merged = np.concatenate([atom.path_cloud.points, points])
    atom.path_cloud = PointCloud3(voxel_downsample(merged, cfg.voxel, atom.anchor))
    return atom


def structure_detections(frame: Frame, cfg: BuilderConfig,
                         anchor: Optional[Tuple[float, float, float]] = None) -> List[Tuple[str, PointCloud3, float]]:
    """Lift the frame's accepted structure detections to (class, cloud, score)."""
    out = []
    for det in frame.detections:
        if det.class_label not in cfg.structure_vocab or det.score < cfg.score_threshold(det.class_label):
            continue
        pixels = frame.detection_pixels(det, cfg.bbox_depth_band)
        points, _ = unproject_depth(frame.depth, frame.intrinsics, frame.pose, pixels)
        points = points[points[:, 2] > cfg.floor_eps]
        if len(points) < 4:
            continue
        out.append((det.class_label, PointCloud3(voxel_downsample(points, cfg.voxel, anchor)), float(det.score)))
    return out


def sign_crop(frame: Frame, mask_index: int) -> bytes:
    """PNG crop of a sign: the RGB image if the frame has one, the rasterized mask otherwise.

    The sign's tag, if known, travels in the PNG text metadata.
    """
    mask = frame.sign_masks[mask_index]
    rows, cols = np.nonzero(mask)
    y0, y1, x0, x1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    if frame.rgb_ref is not None:
        with Image.open(frame.rgb_ref) as rgb:
            img = rgb.convert("RGB").crop((int(x0), int(y0), int(x1), int(y1)))
    else:
        img = Image.fromarray(mask[y0:y1, x0:x1].astype(np.uint8) * 255)
    info = PngInfo()
    tag = frame.sign_tags[mask_index]
    if tag is not None:
        info.add_text(TAG_KEY, str(tag))
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


class MapBuilder:
    """Single-writer fold of frames into an AtomMap.

    Parameters
    ----------
    cfg : BuilderConfig
        Thresholds of clustering, gating and fusion.
    vlm : optional
        Backend with a `chat(VlmRequest)` method. Without one, signs are mapped but not parsed.
    dictionary : SymbolDictionary, optional
        In-context symbol prototypes, the shipped default if None.
    """

    def __init__(self, cfg: BuilderConfig = None, vlm=None, dictionary: Optional[SymbolDictionary] = None):
        self.cfg = cfg or BuilderConfig()
        self.vlm = vlm
        self.dictionary = dictionary
        self.atom = AtomMap()

    @property
    def warnings(self) -> List[str]:
        return self.atom.warnings

    def _warn(self, message: str):
        LOGGER.warning(message)
        self.atom.warnings.append(message)

    def _parse(self, frame: Frame, mask_index: int, sign: SignInstance):
        if self.vlm is None:
            return
        if self.dictionary is None:
            self.dictionary = load_symbol_dictionary()
        dist, angle = viewpoint_geometry(frame.pose, sign)
        request = build_parse_request(sign_crop(frame, mask_index), self.dictionary)
        reply = self.vlm.chat(request)
        try:
            cues = parse_vlm_reply(reply.text, sign.warnings)
        except UnparseableReply as err:
            sign.warnings.append(f"t={frame.timestamp}: {err}")
            LOGGER.warning(f"Sign {sign.id}: {err}")
            return
        sign.parse_history.append(ParseRecord(frame.timestamp, cues, dist, angle))

    def add_frame(self, frame: Frame):
        atom = self.atom
        if atom.anchor is None:
            atom.anchor = (float(frame.pose.translation[0]), float(frame.pose.translation[1]),
                           frame.pose.heading())
        atom.frame_log.append((frame.timestamp, frame.pose))

        for i in range(len(frame.sign_masks)):
            try:
                centroid, normal = estimate_sign_geometry(frame, i, self.cfg.min_sign_pixels)
            except InsufficientDepth as err:
                self._warn(f"{type(err).__name__}: {err}")
                continue
            sign = atom.sign(cluster_sign(atom, centroid, normal, self.cfg))
            if viewpoint_suitable(frame.pose, sign, self.cfg):
                self._parse(frame, i, sign)

        associate_structures(atom.structures, structure_detections(frame, self.cfg, atom.anchor), self.cfg,
                             atom.anchor)
        accumulate_path(atom, frame, self.cfg)

    def finalize(self) -> AtomMap:
        for sign in self.atom.signs:
            history = [record.cues for record in sign.parse_history]
            sign.merged_cues = merge_cues(history) if history else NavCueSet()
        return self.atom


def build(frames: Iterable[Frame],
          cfg: BuilderConfig = None,
          vlm=None,
          dictionary: Optional[SymbolDictionary] = None,
          progress: bool = True) -> AtomMap:
    """Fold a timestamp-ordered frame stream into a finalized AtomMap."""
    builder = MapBuilder(cfg, vlm, dictionary)
    for frame in tqdm(frames, file=sys.stderr, disable=not progress, desc="frames"):
        builder.add_frame(frame)
    return builder.finalize()
