"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

from typing import Dict

from .utils import canonical_dumps

# Prompt texts are sent verbatim, trailing whitespace included. Placeholders are substituted
# with str.replace since the texts contain literal braces.

IN_CONTEXT_PROMPT = ("The symbols in the image are associated to their semantic meaning through their index. "
                     "This following dictionary {symbolDictionary} includes their semantic meaning.")

PARSE_PROMPT = "\n".join([
    "Break down the directions sign you see in the image. "
    "If the text is the illegible/unreadable, do not consider it. ",
    "Return your answer in the form ",
    "{",
    "    'forward': [content], ",
    "    'backwards': [content],",
    "    'left': [content], ",
    "    'right': [content],",
    "    'forward-left': [content], ",
    "    'forward-right': [content], ",
    "    'backward-right': [content], ",
    "    'backward-left': [content], ",
    "    'forward-then-left': [content], ",
    "    'forward-then-right': [content], ",
    "    'left-then-forward': [content], ",
    "    'right-then-forward': [content], ",
    "    'up-stairs' : [content], ",
    "    'down-stairs' : [content], ",
    "    'down-escalator': [content], ",
    "    'up-escalator': [content],",
    "    'locational': [content]",
    "}." + " " * 27,
    "Return only the dict (no comments or formatting).",
])

GROUNDING_PROMPT = ("Select a letter in a circle or a object name in a bounding box in this image that is "
                    "potentially closest to {location}, given the following list that consist of direction "
                    "and places: {parsing}. Remember that lifts, stairs and escalators allow you do go up and "
                    "down. Reason carefully about the spatial layout and the affordance of the objects. Return "
                    "the answer based on the example format: [A] / [Door].")

# markers the oracle uses to tell requests apart
PARSE_MARKER = "Break down the directions sign"
GROUNDING_MARKER = "Select a letter in a circle"


def in_context_text(labels: Dict[str, str]) -> str:
    """In-context prompt with the symbol labels substituted as canonical JSON."""
    return IN_CONTEXT_PROMPT.replace("{symbolDictionary}", canonical_dumps(labels) if labels else "{}")


def grounding_text(location: str, parsing: str) -> str:
    """Grounding prompt for one location and the printed instruction dict of its sign."""
    return GROUNDING_PROMPT.replace("{location}", location, 1).replace("{parsing}", parsing, 1)


def split_grounding_text(text: str):
    """Recover (location, parsing) from a text built by `grounding_text`.

    Returns None if the text does not follow the grounding template.
    """
    head, sep, rest = GROUNDING_PROMPT.partition("{location}")
    middle, _, tail = rest.partition("{parsing}")
    if not sep or not text.startswith(head) or not text.endswith(tail):
        return None
    body = text[len(head):len(text) - len(tail)]
    location, found, parsing = body.partition(middle)
    if not found:
        return None
    return location, parsing
