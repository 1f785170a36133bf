"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import (ChoiceDepthMissing, NoMatch, NoParsedSigns, NoSuchStructure, NotDirectional,
                     NothingToGround, UngroundableReply)
from .geometry import unproject
from .prompts import grounding_text
from .render import AtomRender, RenderConfig, render
from .scenemodel import (AtomMap, Instruction, NavCue, NavCueSet, format_instruction_dict, iter_cue_locations,
                         normalize_phrase)
from .utils import config_from_dict
from .vlm import VlmRequest

LOGGER = logging.getLogger(__name__)

FRONTIER = "frontier"
STRUCTURE = "structure"
LOCATIONAL = "locational"

_BRACKETED = re.compile(r"\[([^\[\]]+)\]")
_PUNCT = " \t\n.,;:!?'\"`*()"


@dataclass(frozen=True)
class GroundingConfig:
    threshold: float = 0.6
    tie_eps: float = 1e-9
    grounder: str = "geometric"

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"Match threshold must lie in [0, 1], got {self.threshold}")
        if self.grounder not in ("geometric", "vlm"):
            raise ValueError(f"Unknown grounder '{self.grounder}'")

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "GroundingConfig":
        return config_from_dict(cls, data)


@njit
def _levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    n, m = len(a), len(b)
    prev = np.arange(m + 1)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[m]


def _codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)


def levenshtein(a: str, b: str) -> int:
    """Edit distance over Unicode code points."""
    return int(_levenshtein(_codepoints(a), _codepoints(b)))


def match_score(a: str, b: str) -> float:
    """1 - lev / max length of the normalized phrases, 1.0 for two empty phrases."""
    a, b = normalize_phrase(a), normalize_phrase(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


@dataclass(frozen=True)
class LocationMatch:
    sign_id: int
    location: str
    score: float
    cue: Optional[NavCue]


def match_location(query: str, atom: AtomMap, threshold: float = 0.6) -> LocationMatch:
    """Best fuzzy match of a query against every phrase on every parsed sign.

    Ties across signs go to the sign nearer to the last camera pose, ties within a sign to
    directional cues over locational phrases.

    Raises
    ------
    NoParsedSigns
        If no sign carries any parsed phrase.
    NoMatch
        If the best score is below `threshold`.
    """
    entries = list(iter_cue_locations(atom))
    if not entries:
        raise NoParsedSigns("No sign in the map has parsed cues")
    last = atom.last_pose()
    ref = last.translation[:2] if last is not None else np.zeros(2)

    best, best_key = None, None
    for sign, phrase, cue in entries:
        score = match_score(query, phrase)
        key = (-score, float(np.linalg.norm(sign.centroid[:2] - ref)), cue is None)
        if best_key is None or key < best_key:
            best, best_key = LocationMatch(sign.id, phrase, score, cue), key
    if best.score < threshold:
        raise NoMatch(query, best.score)
    return best


@dataclass(frozen=True, eq=False)
class Selection:
    """Element of a render chosen by a grounder: a frontier, a structure or no direction at all."""
    kind: str
    key: str = ""
    point: Optional[np.ndarray] = None
    class_label: Optional[str] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Selection):
            return NotImplemented
        return self.kind == other.kind and self.key == other.key

    __hash__ = None

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "key": self.key,
            "point": None if self.point is None else [float(v) for v in self.point],
            "class": self.class_label
        }


LOCATIONAL_ONLY = Selection(LOCATIONAL)


def render_candidates(render_: AtomRender) -> List[Selection]:
    """Frontiers and structure centers of a render, in sidecar order."""
    out = [Selection(FRONTIER, f.letter, np.asarray(f.point, dtype=np.float64)) for f in render_.frontiers]
    out += [Selection(STRUCTURE, b.label, np.asarray(b.center, dtype=np.float64), b.class_label) for b in render_.boxes]
    return out


def _tie_key(candidate: Selection) -> Tuple[float, int, str]:
    return float(np.linalg.norm(candidate.point)), 0 if candidate.kind == FRONTIER else 1, candidate.key


def select_by_rule(candidates: Sequence[Selection], instruction: Instruction, tie_eps: float = 1e-9) -> Selection:
    """Deterministic choice of the element a sign instruction points to.

    Structure tokens take the nearest structure of their class. Directional tokens take
    the candidate whose direction from the sign has the largest cosine with the
    instruction. Compound tokens first keep candidates ahead along their first step and
    aim at the blend of both steps, falling back to the first step alone.

    Raises
    ------
    NothingToGround
        If there are no candidates.
    NoSuchStructure
        If a structure token finds no structure of its class.
    """
    instruction = Instruction(instruction)
    if instruction.is_locational:
        return LOCATIONAL_ONLY
    if not candidates:
        raise NothingToGround("Render has neither frontiers nor structures")

    if instruction.is_structure:
        same_class = [c for c in candidates if c.kind == STRUCTURE and c.class_label == instruction.structure_class]
        if not same_class:
            raise NoSuchStructure(f"No {instruction.structure_class} in the render for '{instruction.value}'")
        return min(same_class, key=_tie_key)

    pool = list(candidates)
    if instruction.is_compound:
        first, second = (step.direction for step in instruction.steps)
        ahead = [c for c in pool if float(np.dot(c.point, first)) > 0]
        if ahead:
            pool = ahead
            blend = first + second
            direction = blend / np.linalg.norm(blend)
        else:
            direction = first
    else:
        direction = instruction.direction

    def cosine(c: Selection) -> float:
        norm = np.linalg.norm(c.point)
        return -np.inf if norm < 1e-12 else float(np.dot(c.point, direction) / norm)

    scores = [cosine(c) for c in pool]
    best = max(scores)
    tied = [c for c, s in zip(pool, scores) if s >= best - tie_eps]
    return min(tied, key=_tie_key)


def ground_geometric(render_: AtomRender, cue: NavCue, tie_eps: float = 1e-9) -> Selection:
    return select_by_rule(render_candidates(render_), cue.instruction, tie_eps)


def _squash(text: str) -> str:
    return " ".join(text.lower().replace("#", " ").split())


def parse_grounding_reply(text: str, render_: AtomRender) -> Selection:
    """Map a reply like "[B]" or "Stairs" to a render element.

    Bracketed tokens are tried first, then the whole reply. Letters take precedence over
    structure labels, labels over bare class names (nearest structure of the class).

    Raises
    ------
    UngroundableReply
        If nothing in the reply names an element of the render.
    """
    candidates = render_candidates(render_)
    frontiers = {c.key.upper(): c for c in candidates if c.kind == FRONTIER}
    structures = [c for c in candidates if c.kind == STRUCTURE]

    tokens = [t.strip(_PUNCT) for t in _BRACKETED.findall(text)] + [text.strip(_PUNCT)]
    for token in tokens:
        if not token:
            continue
        if token.upper() in frontiers:
            return frontiers[token.upper()]
        squashed = _squash(token)
        for c in structures:
            if _squash(c.key) == squashed:
                return c
        same_class = [c for c in structures if c.class_label.lower() == squashed]
        if same_class:
            return min(same_class, key=_tie_key)
    raise UngroundableReply(text)


def build_grounding_request(render_: AtomRender, cue: NavCue) -> VlmRequest:
    parsing = format_instruction_dict(NavCueSet((cue,)))
    return VlmRequest((render_.image, grounding_text(cue.location, parsing)))


def ground_vlm(render_: AtomRender, cue: NavCue, vlm) -> Selection:
    """Ask the VLM which lettered frontier or labeled box the cue leads to."""
    if cue.instruction.is_locational:
        return LOCATIONAL_ONLY
    reply = vlm.chat(build_grounding_request(render_, cue))
    return parse_grounding_reply(reply.text, render_)


def to_subgoal(selection: Selection, render_: AtomRender, atom: AtomMap) -> Tuple[np.ndarray, Tuple[float, float, float]]:
    """World subgoal of a selection, on the ground, with the heading from the sign towards it.

    Raises
    ------
    NotDirectional
        For a locational-only selection.
    """
    if selection.kind == LOCATIONAL or selection.point is None:
        raise NotDirectional("A locational cue names the current place and has no direction")
    xy = render_.frame.inverse().apply(selection.point)
    origin = atom.sign(render_.center_sign_id).centroid[:2]
    heading = float(np.arctan2(xy[1] - origin[1], xy[0] - origin[0]))
    return np.array([xy[0], xy[1], 0.0]), (float(xy[0]), float(xy[1]), heading)


@dataclass(frozen=True)
class Choice:
    answer_id: str
    t: float
    px: Tuple[float, float]


@dataclass(frozen=True)
class GroundingQuery:
    goal_text: str
    mode: str = "subgoal"
    choices: Tuple[Choice, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if self.mode not in ("subgoal", "multiple-choice"):
            raise ValueError(f"Unknown query mode '{self.mode}'")
        if self.mode == "multiple-choice":
            ids = [c.answer_id for c in self.choices]
            if len(ids) < 2 or len(set(ids)) != len(ids):
                raise ValueError(f"Multiple-choice queries need at least 2 distinct answer ids, got {ids}")

    @classmethod
    def from_dict(cls, data: Dict) -> "GroundingQuery":
        """Benchmark query record: {"query", "frame_t", "choices": [{"id", "px"}]}."""
        t = float(data.get("frame_t", 0.0))
        choices = tuple(Choice(str(c["id"]), float(c.get("t", t)), (float(c["px"][0]), float(c["px"][1])))
                        for c in data.get("choices", []))
        return cls(str(data["query"]), "multiple-choice" if choices else "subgoal", choices)


def answer_multiple_choice(query: GroundingQuery, subgoal_3d: np.ndarray, sequence) -> str:
    """Choice whose back-projected pixel lies nearest to the subgoal, ties by answer id.

    Parameters
    ----------
    sequence :
        Anything with `frame_at(t)`, usually a RecordedSequence.

    Raises
    ------
    ChoiceDepthMissing
        If a choice pixel has no valid depth.
    """
    ranked = []
    for choice in query.choices:
        frame = sequence.frame_at(choice.t)
        u, v = choice.px
        row, col = int(round(v)), int(round(u))
        K = frame.intrinsics
        if not (0 <= row < K.height and 0 <= col < K.width):
            raise ChoiceDepthMissing(choice.answer_id)
        depth = float(frame.depth[row, col])
        if not depth > 0:
            raise ChoiceDepthMissing(choice.answer_id)
        point = unproject((u, v), depth, K, frame.pose)
        ranked.append((float(np.linalg.norm(point - subgoal_3d)), choice.answer_id))
    return min(ranked)[1]


@dataclass
class GroundingResult:
    sign_id: int
    matched_location: str
    match_score: float
    instruction: Instruction
    selected: Selection
    subgoal_3d: Optional[np.ndarray] = None
    subgoal_se2: Optional[Tuple[float, float, float]] = None
    answer: Optional[str] = None
    diagnostics: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "sign_id": int(self.sign_id),
            "matched_location": self.matched_location,
            "match_score": float(self.match_score),
            "instruction": self.instruction.value,
            "selected": self.selected.to_dict(),
            "subgoal_3d": None if self.subgoal_3d is None else [float(v) for v in self.subgoal_3d],
            "subgoal_se2": None if self.subgoal_se2 is None else [float(v) for v in self.subgoal_se2],
            "answer": self.answer,
            "vertical_sense": self.instruction.vertical_sense if self.instruction.is_structure else None
        }


def ground_query(atom: AtomMap,
                 query: GroundingQuery,
                 grounding_cfg: GroundingConfig = None,
                 render_cfg: RenderConfig = None,
                 vlm=None,
                 sequence=None,
                 renders: Optional[Dict[int, AtomRender]] = None) -> GroundingResult:
    """Match, render, select, lift to a subgoal and, for multiple-choice queries, answer.

    `renders` caches renders per sign across queries on the same map.
    """
    grounding_cfg = grounding_cfg or GroundingConfig()
    match = match_location(query.goal_text, atom, grounding_cfg.threshold)
    if match.cue is None:
        return GroundingResult(match.sign_id, match.location, match.score, Instruction.LOCATIONAL, LOCATIONAL_ONLY)

    renders = renders if renders is not None else {}
    if match.sign_id not in renders:
        renders[match.sign_id] = render(atom, match.sign_id, render_cfg)
    render_ = renders[match.sign_id]

    if grounding_cfg.grounder == "vlm":
        if vlm is None:
            raise ValueError("The VLM grounder needs a VLM backend")
        selected = ground_vlm(render_, match.cue, vlm)
    else:
        selected = ground_geometric(render_, match.cue, grounding_cfg.tie_eps)

    result = GroundingResult(match.sign_id, match.location, match.score, match.cue.instruction, selected)
    if selected.kind == LOCATIONAL:
        return result
    result.subgoal_3d, result.subgoal_se2 = to_subgoal(selected, render_, atom)
    if query.mode == "multiple-choice":
        if sequence is None:
            raise ValueError("Multiple-choice queries need the recorded sequence")
        result.answer = answer_multiple_choice(query, result.subgoal_3d, sequence)
    LOGGER.debug(f"'{query.goal_text}' -> sign {match.sign_id} '{match.location}' ({match.score:.2f}), "
                 f"{selected.kind} {selected.key}")
    return result
