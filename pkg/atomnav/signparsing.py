"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import ast
import json
import logging
import re
from collections import Counter, OrderedDict
from typing import Dict, List, Optional, Sequence

from .errors import UnparseableReply
from .prompts import PARSE_PROMPT, in_context_text
from .scenemodel import Instruction, NavCue, NavCueSet, normalize_phrase
from .symbols import SymbolDictionary
from .vlm import VlmRequest

LOGGER = logging.getLogger(__name__)

_FENCE = re.compile(r"```[a-zA-Z]*")


def build_parse_request(sign_image: bytes, dictionary: SymbolDictionary) -> VlmRequest:
    """In-context parse request: prototype sheet, its labels, the sign crop and the parse prompt."""
    if not sign_image:
        raise ValueError("Sign image must not be empty")
    return VlmRequest((dictionary.image_bytes(), in_context_text(dictionary.labels), bytes(sign_image),
                       PARSE_PROMPT))


def _literal(body: str):
    try:
        return json.loads(body)
    except ValueError:
        pass
    try:
        return ast.literal_eval(body)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        pass
    try:
        return json.loads(body.replace("'", '"'))
    except ValueError:
        return None


def parse_vlm_reply(text: str, warnings: Optional[List[str]] = None) -> NavCueSet:
    """Extract the instruction dict from a VLM reply.

    Code fences are stripped and single or double quotes are accepted. Keys outside the
    instruction vocabulary and empty phrases are dropped and reported in `warnings`.

    Parameters
    ----------
    text : str
        Raw reply.
    warnings : List[str], optional
        Collects one message per dropped item.

    Returns
    -------
    NavCueSet
        Deduplicated cues in reply order.

    Raises
    ------
    UnparseableReply
        If the reply holds no dict literal.
    """
    warnings = warnings if warnings is not None else []
    stripped = _FENCE.sub("", text)
    start, end = stripped.find("{"), stripped.rfind("}")
    if start < 0 or end <= start:
        raise UnparseableReply(text)
    data = _literal(stripped[start:end + 1])
    if not isinstance(data, dict):
        raise UnparseableReply(text)

    cues, locational = [], []
    for key, value in data.items():
        token = str(key).strip().lower()
        try:
            instruction = Instruction(token)
        except ValueError:
            warnings.append(f"dropped unknown key '{key}'")
            LOGGER.warning(f"VLM reply has unknown key '{key}'")
            continue
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)):
            warnings.append(f"dropped non-list value under '{token}'")
            continue
        for phrase in value:
            location = normalize_phrase(str(phrase)) if phrase is not None else ""
            if not location:
                warnings.append(f"dropped empty phrase under '{token}'")
                continue
            if instruction.is_locational:
                locational.append(location)
            else:
                cues.append(NavCue(location, instruction))
    return NavCueSet(tuple(cues), tuple(locational))


def merge_cues(history: Sequence[NavCueSet]) -> NavCueSet:
    """Majority vote per location over a sign's parse history.

    Ties go to the instruction observed first for that location. Locational phrases
    are unioned in order of first appearance.
    """
    if not history:
        raise ValueError("Cannot merge an empty parse history")
    votes: Dict[str, Counter] = OrderedDict()
    first_seen: Dict[str, Dict[Instruction, int]] = {}
    order = 0
    for cue_set in history:
        for cue in cue_set.cues:
            votes.setdefault(cue.location, Counter())[cue.instruction] += 1
            first_seen.setdefault(cue.location, {}).setdefault(cue.instruction, order)
            order += 1

    cues = []
    for location, counter in votes.items():
        best = max(counter.items(), key=lambda kv: (kv[1], -first_seen[location][kv[0]]))[0]
        cues.append(NavCue(location, best))
    locational = [phrase for cue_set in history for phrase in cue_set.locational]
    return NavCueSet(tuple(cues), tuple(locational))
