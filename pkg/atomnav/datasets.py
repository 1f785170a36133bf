"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import FrameError, NotASequence, OrderingError
from .geometry import CameraIntrinsics, Pose3
from .utils import canonical_dumps

LOGGER = logging.getLogger(__name__)

SEQUENCE_VERSION = 1
DEPTH_SCALE = 0.001
MANIFEST = "sequence.json"


def rle_encode(mask: np.ndarray) -> Dict:
    """Row-major run-length encoding; counts alternate starting with a run of zeros."""
    mask = np.asarray(mask, dtype=bool)
    flat = mask.reshape(-1)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": [int(c) for c in counts]}


def rle_decode(rle: Dict) -> np.ndarray:
    h, w = rle["size"]
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w or np.any(counts < 0):
        raise ValueError(f"Run lengths sum to {counts.sum()}, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


@dataclass(eq=False)
class Detection:
    """Open-vocabulary detection of a navigational structure in one frame.

    `bbox_px` uses pixel edges: the box covers columns x0..x1-1 and rows y0..y1-1.
    """
    class_label: str
    bbox_px: Tuple[int, int, int, int]
    score: float
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        x0, y0, x1, y1 = (int(v) for v in self.bbox_px)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"Degenerate bounding box {self.bbox_px}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection score {self.score} outside [0, 1]")
        self.bbox_px = (x0, y0, x1, y1)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        same_mask = ((self.mask is None and other.mask is None)
                     or (self.mask is not None and other.mask is not None
                         and np.array_equal(self.mask, other.mask)))
        return (self.class_label == other.class_label and self.bbox_px == other.bbox_px
                and self.score == other.score and same_mask)

    def check_bounds(self, width: int, height: int):
        x0, y0, x1, y1 = self.bbox_px
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ValueError(f"Bounding box {self.bbox_px} outside {width}x{height} image")
        if self.mask is not None and self.mask.shape != (height, width):
            raise ValueError(f"Detection mask shape {self.mask.shape} != {(height, width)}")


@dataclass(eq=False)
class Frame:
    """One time step of perception output: pose, depth and per-pixel annotations."""
    timestamp: float
    pose: Pose3
    intrinsics: CameraIntrinsics
    depth: np.ndarray
    path_mask: np.ndarray
    detections: List[Detection] = field(default_factory=list)
    sign_masks: List[np.ndarray] = field(default_factory=list)
    sign_tags: List[Optional[str]] = field(default_factory=list)
    rgb_ref: Optional[str] = None

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        self.path_mask = np.asarray(self.path_mask, dtype=bool)
        self.sign_masks = [np.asarray(m, dtype=bool) for m in self.sign_masks]
        if not self.sign_tags:
            self.sign_tags = [None] * len(self.sign_masks)
        if len(self.sign_tags) != len(self.sign_masks):
            raise ValueError("Need exactly one tag (or None) per sign mask")
        for name, arr in [("depth", self.depth), ("path_mask", self.path_mask)] + \
                [("sign_mask", m) for m in self.sign_masks]:
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, intrinsics say {shape}")
        for det in self.detections:
            det.check_bounds(self.intrinsics.width, self.intrinsics.height)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.timestamp == other.timestamp and self.pose == other.pose
                and self.intrinsics == other.intrinsics and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.path_mask, other.path_mask)
                and self.detections == other.detections
                and len(self.sign_masks) == len(other.sign_masks)
                and all(np.array_equal(a, b) for a, b in zip(self.sign_masks, other.sign_masks))
                and self.sign_tags == other.sign_tags and self.rgb_ref == other.rgb_ref)

    def detection_pixels(self, det: Detection, depth_band: float) -> np.ndarray:
        """Pixel mask of a detection: its instance mask, else its box filtered around the median depth."""
        if det.mask is not None:
            return det.mask & (self.depth > 0)
        x0, y0, x1, y1 = det.bbox_px
        region = np.zeros_like(self.path_mask)
        region[y0:y1, x0:x1] = True
        region &= self.depth > 0
        if not region.any():
            return region
        median = np.median(self.depth[region])
        return region & (np.abs(self.depth - median) <= depth_band)


def quantize_depth(depth: np.ndarray, depth_scale: float = DEPTH_SCALE) -> np.ndarray:
    """Metric depth to the 16-bit on-disk encoding (0 = invalid)."""
    units = np.where(np.isfinite(depth) & (depth > 0), np.round(depth / depth_scale), 0)
    return np.clip(units, 0, 65535).astype(np.uint16)


def dequantize_depth(units: np.ndarray, depth_scale: float = DEPTH_SCALE) -> np.ndarray:
    return units.astype(np.float32) * np.float32(depth_scale)


def _write_png_u16(path: Path, arr: np.ndarray):
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def _write_png_mask(path: Path, mask: np.ndarray):
    Image.fromarray(mask.astype(np.uint8) * 255).save(path, format="PNG")


def _annotations_to_dict(frame: Frame) -> Dict:
    return {
        "detections": [{
            "class": det.class_label,
            "bbox": list(det.bbox_px),
            "score": float(det.score),
            "mask": None if det.mask is None else rle_encode(det.mask)
        } for det in frame.detections],
        "signs": [{
            "mask": rle_encode(mask),
            "tag": tag
        } for mask, tag in zip(frame.sign_masks, frame.sign_tags)]
    }


def write_sequence(frames: Sequence[Frame], out_dir: Path, gravity_aligned: bool = True) -> Path:
    """Write frames as a recorded sequence (manifest + per-frame assets).

    Parameters
    ----------
    frames : Sequence[Frame]
        Frames in strictly increasing timestamp order, all sharing one camera.
    out_dir : Path
        Directory to write into. Created if missing.
    gravity_aligned : bool, optional
        Whether the world frame of the poses is Z-up, by default True

    Returns
    -------
    Path
        Path of the manifest.
    """
    out_dir = Path(out_dir)
    for sub in ["depth", "path", "annotations"]:
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    if not frames:
        raise ValueError("Cannot write an empty sequence")
    intrinsics = frames[0].intrinsics

    entries = []
    last_t = None
    for i, frame in enumerate(frames):
        if frame.intrinsics != intrinsics:
            raise ValueError(f"Frame {i} uses different intrinsics than frame 0")
        if last_t is not None and frame.timestamp <= last_t:
            raise OrderingError(f"Frame {i} has t={frame.timestamp} after t={last_t}")
        last_t = frame.timestamp

        assets = {
            "depth": f"depth/{i:06d}.png",
            "path_mask": f"path/{i:06d}.png",
            "annotations": f"annotations/{i:06d}.json"
        }
        _write_png_u16(out_dir / assets["depth"], quantize_depth(frame.depth))
        _write_png_mask(out_dir / assets["path_mask"], frame.path_mask)
        (out_dir / assets["annotations"]).write_text(canonical_dumps(_annotations_to_dict(frame)))
        if frame.rgb_ref is not None:
            assets["rgb"] = frame.rgb_ref
        entries.append({"t": float(frame.timestamp), "pose": frame.pose.to_dict(), "assets": assets})

    manifest = {
        "atomnav_sequence": SEQUENCE_VERSION,
        "intrinsics": intrinsics.to_dict(),
        "depth_scale": DEPTH_SCALE,
        "gravity_aligned": bool(gravity_aligned),
        "frames": entries
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return path


class RecordedSequence:
    """Lazy reader of a recorded sequence directory.

    Parameters
    ----------
    seq_dir : Path
        Directory containing `sequence.json`. Asset paths are relative to it.

    Raises
    ------
    NotASequence
        If the manifest is missing or not a sequence manifest.
    OrderingError
        If frame timestamps are not strictly increasing.
    """

    def __init__(self, seq_dir: Path):
        self.seq_dir = Path(seq_dir)
        manifest = self.seq_dir / MANIFEST
        if not manifest.is_file():
            raise NotASequence(f"No {MANIFEST} in {self.seq_dir}")
        try:
            meta = json.loads(manifest.read_text())
            if meta.get("atomnav_sequence") != SEQUENCE_VERSION:
                raise ValueError(f"unsupported version {meta.get('atomnav_sequence')!r}")
            self.intrinsics = CameraIntrinsics.from_dict(meta["intrinsics"])
            self.depth_scale = float(meta["depth_scale"])
            self.gravity_aligned = bool(meta.get("gravity_aligned", True))
            self.entries = list(meta["frames"])
            self.timestamps = [float(e["t"]) for e in self.entries]
        except (ValueError, KeyError, TypeError) as err:
            raise NotASequence(f"{manifest} is not a valid sequence manifest: {err}")
        if not self.gravity_aligned:
            LOGGER.warning(f"{self.seq_dir} is not gravity aligned, ground filtering will be unreliable")

        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if cur <= prev:
                raise OrderingError(f"Timestamp regression in {manifest}: {cur} after {prev}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> Frame:
        entry = self.entries[idx]
        t = float(entry["t"])
        assets = entry["assets"]
        depth = dequantize_depth(self._load_png(assets, "depth", t), self.depth_scale)
        path_mask = self._load_png(assets, "path_mask", t) > 0

        ann_file = self._asset_path(assets, "annotations", t)
        try:
            ann = json.loads(ann_file.read_text())
            detections = [
                Detection(d["class"], tuple(d["bbox"]), float(d["score"]),
                          None if d.get("mask") is None else rle_decode(d["mask"]))
                for d in ann["detections"]
            ]
            sign_masks = [rle_decode(s["mask"]) for s in ann["signs"]]
            sign_tags = [s.get("tag") for s in ann["signs"]]
        except (ValueError, KeyError, TypeError) as err:
            raise FrameError("annotations", t, str(err))

        try:
            return Frame(timestamp=t,
                         pose=Pose3.from_dict(entry["pose"]),
                         intrinsics=self.intrinsics,
                         depth=depth,
                         path_mask=path_mask,
                         detections=detections,
                         sign_masks=sign_masks,
                         sign_tags=sign_tags,
                         rgb_ref=None if "rgb" not in assets else str(self.seq_dir / assets["rgb"]))
        except ValueError as err:
            raise FrameError("annotations", t, str(err))

    def __iter__(self) -> Iterator[Frame]:
        for idx in range(len(self)):
            yield self[idx]

    def _asset_path(self, assets: Dict, name: str, t: float) -> Path:
        if name not in assets:
            raise FrameError(name, t, "not listed in manifest")
        path = self.seq_dir / assets[name]
        if not path.is_file():
            raise FrameError(name, t, f"{path} does not exist")
        return path

    def _load_png(self, assets: Dict, name: str, t: float) -> np.ndarray:
        path = self._asset_path(assets, name, t)
        try:
            with Image.open(path) as img:
                arr = np.array(img)
        except OSError as err:
            raise FrameError(name, t, str(err))
        if arr.shape != (self.intrinsics.height, self.intrinsics.width):
            raise FrameError(name, t, f"image shape {arr.shape} does not match intrinsics")
        return arr

    def index_at(self, t: float, tol: float = 1e-6) -> int:
        """Index of the frame with timestamp `t`."""
        idx = int(np.argmin(np.abs(np.asarray(self.timestamps) - t)))
        if abs(self.timestamps[idx] - t) > tol:
            raise KeyError(f"No frame at t={t} in {self.seq_dir}")
        return idx

    def frame_at(self, t: float) -> Frame:
        return self[self.index_at(t)]


def read_sequence(seq_dir: Path) -> Iterator[Frame]:
    """Frames of a recorded sequence in timestamp order, assets loaded as frames are consumed."""
    return iter(RecordedSequence(seq_dir))


def frame_summary(frame: Frame) -> List[str]:
    """Short description used in debug logs."""
    return [
        f"t={frame.timestamp:.2f}",
        f"path_px={int(frame.path_mask.sum())}",
        f"signs={len(frame.sign_masks)}",
        f"detections={len(frame.detections)}"
    ]
