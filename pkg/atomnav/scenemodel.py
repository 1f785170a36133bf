"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import base64
import binascii
import json
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import ParseError
from .geometry import OrientedBox3, PointCloud3, Pose3, Rigid2, compose
from .utils import canonical_dumps

ATOM_VERSION = 1

_DIAG = float(np.sqrt(0.5))


class Instruction(str, Enum):
    """Closed vocabulary of navigational instructions a sign can give."""
    FORWARD = "forward"
    BACKWARDS = "backwards"
    LEFT = "left"
    RIGHT = "right"
    FORWARD_LEFT = "forward-left"
    FORWARD_RIGHT = "forward-right"
    BACKWARD_RIGHT = "backward-right"
    BACKWARD_LEFT = "backward-left"
    FORWARD_THEN_LEFT = "forward-then-left"
    FORWARD_THEN_RIGHT = "forward-then-right"
    LEFT_THEN_FORWARD = "left-then-forward"
    RIGHT_THEN_FORWARD = "right-then-forward"
    UP_STAIRS = "up-stairs"
    DOWN_STAIRS = "down-stairs"
    DOWN_ESCALATOR = "down-escalator"
    UP_ESCALATOR = "up-escalator"
    LOCATIONAL = "locational"

    @property
    def is_locational(self) -> bool:
        return self is Instruction.LOCATIONAL

    @property
    def is_structure(self) -> bool:
        return self in _STRUCTURES

    @property
    def is_compound(self) -> bool:
        return self in _COMPOUNDS

    @property
    def direction(self) -> np.ndarray:
        """Unit vector in the sign frame (+Y is the reader's forward)."""
        if self not in _DIRECTIONS:
            raise ValueError(f"'{self.value}' has no single direction")
        return _DIRECTIONS[self].copy()

    @property
    def steps(self) -> Tuple["Instruction", "Instruction"]:
        """Ordered primitive directions of an X-then-Y instruction."""
        if self not in _COMPOUNDS:
            raise ValueError(f"'{self.value}' is not a compound instruction")
        return _COMPOUNDS[self]

    @property
    def structure_class(self) -> str:
        return _STRUCTURES[self][0]

    @property
    def vertical_sense(self) -> str:
        return _STRUCTURES[self][1]


_DIRECTIONS = {
    Instruction.FORWARD: np.array([0.0, 1.0]),
    Instruction.BACKWARDS: np.array([0.0, -1.0]),
    Instruction.LEFT: np.array([-1.0, 0.0]),
    Instruction.RIGHT: np.array([1.0, 0.0]),
    Instruction.FORWARD_LEFT: np.array([-_DIAG, _DIAG]),
    Instruction.FORWARD_RIGHT: np.array([_DIAG, _DIAG]),
    Instruction.BACKWARD_RIGHT: np.array([_DIAG, -_DIAG]),
    Instruction.BACKWARD_LEFT: np.array([-_DIAG, -_DIAG]),
}

_COMPOUNDS = {
    Instruction.FORWARD_THEN_LEFT: (Instruction.FORWARD, Instruction.LEFT),
    Instruction.FORWARD_THEN_RIGHT: (Instruction.FORWARD, Instruction.RIGHT),
    Instruction.LEFT_THEN_FORWARD: (Instruction.LEFT, Instruction.FORWARD),
    Instruction.RIGHT_THEN_FORWARD: (Instruction.RIGHT, Instruction.FORWARD),
}

_STRUCTURES = {
    Instruction.UP_STAIRS: ("stairs", "up"),
    Instruction.DOWN_STAIRS: ("stairs", "down"),
    Instruction.DOWN_ESCALATOR: ("escalator", "down"),
    Instruction.UP_ESCALATOR: ("escalator", "up"),
}

# order of the keys in the sign parsing prompt
INSTRUCTION_ORDER = list(Instruction)


def normalize_phrase(text: str) -> str:
    """Lowercase, NFC-normalize, trim and collapse internal whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


@dataclass(frozen=True)
class NavCue:
    location: str
    instruction: Instruction

    def __post_init__(self):
        location = normalize_phrase(self.location)
        if not location:
            raise ValueError("Cue locations must not be empty")
        object.__setattr__(self, "location", location)
        object.__setattr__(self, "instruction", Instruction(self.instruction))


@dataclass(frozen=True)
class NavCueSet:
    """Parsed content of one sign: directional cues plus 'you are here' phrases.

    Duplicates are removed on construction, first occurrence wins.
    """
    cues: Tuple[NavCue, ...] = ()
    locational: Tuple[str, ...] = ()

    def __post_init__(self):
        cues = tuple(dict.fromkeys(self.cues))
        if any(c.instruction.is_locational for c in cues):
            raise ValueError("Locational phrases belong into `locational`, not into cues")
        phrases = (normalize_phrase(p) for p in self.locational)
        object.__setattr__(self, "cues", cues)
        object.__setattr__(self, "locational", tuple(dict.fromkeys(p for p in phrases if p)))

    def __len__(self) -> int:
        return len(self.cues) + len(self.locational)

    def is_empty(self) -> bool:
        return len(self) == 0

    def locations(self) -> List[str]:
        return list(dict.fromkeys([c.location for c in self.cues] + list(self.locational)))

    def to_dict(self) -> Dict:
        return {
            "cues": [[c.location, c.instruction.value] for c in self.cues],
            "locational": list(self.locational)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NavCueSet":
        return cls(tuple(NavCue(loc, Instruction(token)) for loc, token in data["cues"]),
                   tuple(data["locational"]))

    def as_instruction_dict(self) -> Dict[str, List[str]]:
        """All 17 instruction keys in prompt order, each with its list of locations."""
        out = {token.value: [] for token in INSTRUCTION_ORDER}
        for cue in self.cues:
            out[cue.instruction.value].append(cue.location)
        out[Instruction.LOCATIONAL.value] = list(self.locational)
        return out


def format_instruction_dict(cues: NavCueSet) -> str:
    """Render cues in the dict layout the sign parsing prompt asks the VLM for."""
    return repr(cues.as_instruction_dict())


@dataclass
class ParseRecord:
    """One VLM parse of a sign, with the viewpoint it was taken from."""
    timestamp: float
    cues: NavCueSet
    distance: float = 0.0
    angle_deg: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "t": float(self.timestamp),
            "cues": self.cues.to_dict(),
            "distance": float(self.distance),
            "angle_deg": float(self.angle_deg)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ParseRecord":
        return cls(float(data["t"]), NavCueSet.from_dict(data["cues"]), float(data["distance"]),
                   float(data["angle_deg"]))


@dataclass
class SignInstance:
    id: int
    centroid: np.ndarray
    normal: np.ndarray
    parse_history: List[ParseRecord] = field(default_factory=list)
    merged_cues: NavCueSet = field(default_factory=NavCueSet)
    observation_count: int = 1
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise ValueError(f"Sign {self.id} has a zero normal")
        self.normal = normal / norm if abs(norm - 1.0) > 1e-12 else normal

    def to_dict(self) -> Dict:
        return {
            "id": int(self.id),
            "centroid": [float(v) for v in self.centroid],
            "normal": [float(v) for v in self.normal],
            "parse_history": [r.to_dict() for r in self.parse_history],
            "merged_cues": self.merged_cues.to_dict(),
            "observation_count": int(self.observation_count),
            "warnings": list(self.warnings)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SignInstance":
        return cls(id=int(data["id"]),
                   centroid=np.array(data["centroid"]),
                   normal=np.array(data["normal"]),
                   parse_history=[ParseRecord.from_dict(r) for r in data["parse_history"]],
                   merged_cues=NavCueSet.from_dict(data["merged_cues"]),
                   observation_count=int(data["observation_count"]),
                   warnings=list(data.get("warnings", [])))

    def transformed(self, g: Rigid2) -> "SignInstance":
        xy = g.apply(self.centroid[:2])
        nxy = g.apply_vector(self.normal[:2])
        return SignInstance(self.id, np.array([xy[0], xy[1], self.centroid[2]]),
                            np.array([nxy[0], nxy[1], self.normal[2]]), list(self.parse_history),
                            self.merged_cues, self.observation_count, list(self.warnings))


@dataclass
class StructureInstance:
    id: int
    class_label: str
    box: OrientedBox3
    confidence: float
    fused_cloud: PointCloud3
    n_detections: int = 1

    def to_dict(self) -> Dict:
        return {
            "id": int(self.id),
            "class": self.class_label,
            "box": self.box.to_dict(),
            "confidence": float(self.confidence),
            "n_detections": int(self.n_detections),
            "cloud": base64.b64encode(self.fused_cloud.to_blob()).decode("ascii")
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "StructureInstance":
        return cls(id=int(data["id"]),
                   class_label=str(data["class"]),
                   box=OrientedBox3.from_dict(data["box"]),
                   confidence=float(data["confidence"]),
                   fused_cloud=PointCloud3.from_blob(base64.b64decode(data["cloud"], validate=True)),
                   n_detections=int(data["n_detections"]))

    def transformed(self, g: Rigid2) -> "StructureInstance":
        return StructureInstance(self.id, self.class_label, self.box.transformed(g), self.confidence,
                                 self.fused_cloud.transformed(g.as_pose3()), self.n_detections)


@dataclass(eq=False)
class AtomMap:
    """3D abstract map of a local scene: signs, structures and the implicit-path cloud.

    `anchor` is the planar pose (x, y, yaw) of the first folded frame. The path cloud's voxel
    grid is attached to it.
    `warnings` records frames the builder skipped, such as signs without usable depth.
    """
    signs: List[SignInstance] = field(default_factory=list)
    structures: List[StructureInstance] = field(default_factory=list)
    path_cloud: PointCloud3 = field(default_factory=PointCloud3)
    frame_log: List[Tuple[float, Pose3]] = field(default_factory=list)
    anchor: Optional[Tuple[float, float, float]] = None
    warnings: List[str] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomMap):
            return NotImplemented
        return serialize_atom(self) == serialize_atom(other)

    __hash__ = None

    def sign(self, sign_id: int) -> SignInstance:
        for sign in self.signs:
            if sign.id == sign_id:
                return sign
        raise KeyError(f"No sign with id {sign_id}")

    def structure(self, structure_id: int) -> StructureInstance:
        for structure in self.structures:
            if structure.id == structure_id:
                return structure
        raise KeyError(f"No structure with id {structure_id}")

    def last_pose(self) -> Optional[Pose3]:
        return self.frame_log[-1][1] if self.frame_log else None

    def transformed(self, g: Rigid2) -> "AtomMap":
        """Apply a planar rigid motion to all 3D content."""
        g3 = g.as_pose3()
        anchor = None
        if self.anchor is not None:
            xy = g.apply(np.array(self.anchor[:2]))
            anchor = (float(xy[0]), float(xy[1]), float(self.anchor[2] + g.theta))
        return AtomMap(signs=[s.transformed(g) for s in self.signs],
                       structures=[s.transformed(g) for s in self.structures],
                       path_cloud=self.path_cloud.transformed(g3),
                       frame_log=[(t, compose(g3, pose)) for t, pose in self.frame_log],
                       anchor=anchor,
                       warnings=list(self.warnings))

    def to_dict(self, with_cloud: bool = True) -> Dict:
        out = {
            "atom_version": ATOM_VERSION,
            "anchor": None if self.anchor is None else [float(v) for v in self.anchor],
            "signs": [s.to_dict() for s in self.signs],
            "structures": [s.to_dict() for s in self.structures],
            "frame_log": [{"t": float(t), "pose": pose.to_dict()} for t, pose in self.frame_log],
            "warnings": list(self.warnings),
        }
        if with_cloud:
            out["path_cloud"] = base64.b64encode(self.path_cloud.to_blob()).decode("ascii")
        return out


def serialize_atom(atom: AtomMap) -> bytes:
    """Canonical JSON encoding, byte-identical for equal maps."""
    return canonical_dumps(atom.to_dict()).encode("utf-8")


def _key_offset(data: bytes, key: str) -> int:
    pos = data.find(f'"{key}"'.encode("utf-8"))
    return max(pos, 0)


def _atom_from_dict(obj: Dict, data: bytes, cloud: Optional[PointCloud3] = None) -> AtomMap:
    if not isinstance(obj, dict):
        raise ParseError("AToM document must be a JSON object", offset=0)
    if obj.get("atom_version") != ATOM_VERSION:
        raise ParseError(f"Unsupported atom_version {obj.get('atom_version')!r}",
                         offset=_key_offset(data, "atom_version"))
    section = "signs"
    try:
        signs = [SignInstance.from_dict(s) for s in obj["signs"]]
        section = "structures"
        structures = [StructureInstance.from_dict(s) for s in obj["structures"]]
        section = "frame_log"
        frame_log = [(float(f["t"]), Pose3.from_dict(f["pose"])) for f in obj["frame_log"]]
        section = "path_cloud"
        if cloud is None:
            cloud = PointCloud3.from_blob(base64.b64decode(obj["path_cloud"], validate=True))
        section = "anchor"
        anchor = None if obj["anchor"] is None else tuple(float(v) for v in obj["anchor"])
        section = "warnings"
        warnings = [str(w) for w in obj.get("warnings", [])]
    except ParseError as err:
        raise ParseError(f"Invalid '{section}': {err}", offset=_key_offset(data, section))
    except (KeyError, TypeError, ValueError, IndexError, binascii.Error) as err:
        raise ParseError(f"Invalid '{section}': {err!r}", offset=_key_offset(data, section))
    return AtomMap(signs, structures, cloud, frame_log, anchor, warnings)


def _load_json(data: bytes):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as err:
        raise ParseError("AToM document is not valid UTF-8", offset=err.start)
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"Malformed AToM JSON: {err.msg}", offset=len(text[:err.pos].encode("utf-8")))


def deserialize_atom(data: bytes) -> AtomMap:
    """Inverse of `serialize_atom`.

    Raises
    ------
    ParseError
        With the byte offset of the first problem found.
    """
    return _atom_from_dict(_load_json(data), data)


def write_atom(atom: AtomMap, path: Path, sibling_cloud: bool = False):
    """Write `*.atom.json`, optionally with the path cloud in a `*.cloud.bin` sibling."""
    path = Path(path)
    if not sibling_cloud:
        path.write_bytes(serialize_atom(atom))
        return
    cloud_path = path.with_name(path.name.replace(".atom.json", "") + ".cloud.bin")
    doc = atom.to_dict(with_cloud=False)
    doc["path_cloud_file"] = cloud_path.name
    path.write_bytes(canonical_dumps(doc).encode("utf-8"))
    cloud_path.write_bytes(atom.path_cloud.to_blob())


def read_atom(path: Path) -> AtomMap:
    path = Path(path)
    data = path.read_bytes()
    obj = _load_json(data)
    if not isinstance(obj, dict) or "path_cloud_file" not in obj:
        return _atom_from_dict(obj, data)
    cloud_path = path.parent / str(obj["path_cloud_file"])
    if not cloud_path.is_file():
        raise ParseError(f"Cloud sibling {cloud_path} is missing", offset=_key_offset(data, "path_cloud_file"))
    return _atom_from_dict(obj, data, cloud=PointCloud3.from_blob(cloud_path.read_bytes()))


def iter_cue_locations(atom: AtomMap) -> Iterable[Tuple[SignInstance, str, Optional[NavCue]]]:
    """(sign, location phrase, cue or None for locational phrases) for every parsed sign."""
    for sign in atom.signs:
        for cue in sign.merged_cues.cues:
            yield sign, cue.location, cue
        for phrase in sign.merged_cues.locational:
            yield sign, phrase, None
