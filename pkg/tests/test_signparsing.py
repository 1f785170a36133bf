"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

from collections import Counter

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from atomnav.errors import UnparseableReply
from atomnav.prompts import PARSE_PROMPT
from atomnav.scenemodel import INSTRUCTION_ORDER, Instruction, NavCue, NavCueSet, format_instruction_dict
from atomnav.signparsing import build_parse_request, merge_cues, parse_vlm_reply
from atomnav.symbols import SymbolDictionary

DIRECTIONAL = [t for t in INSTRUCTION_ORDER if not t.is_locational]


def test_parse_fenced_single_quotes():
    reply = "```python\n{'left': ['Gate A'], 'up-stairs': ['terrace'], 'locational': ['Reception']}\n```"
    cues = parse_vlm_reply(reply)
    assert cues.cues == (NavCue("gate a", "left"), NavCue("terrace", "up-stairs"))
    assert cues.locational == ("reception",)


def test_parse_double_quotes_and_prose():
    cues = parse_vlm_reply('Here you go: {"forward": ["Lobby"], "right": []} hope that helps')
    assert cues.cues == (NavCue("lobby", "forward"),)


def test_parse_drops_unknown_keys_and_empty_phrases():
    warnings = []
    cues = parse_vlm_reply("{'upstairs': ['x'], 'left': ['', 'gate'], 'right': 'parking', 'forward': 3}", warnings)
    assert cues.cues == (NavCue("gate", "left"), NavCue("parking", "right"))
    assert len(warnings) == 3
    assert any("upstairs" in w for w in warnings)


def test_parse_keys_are_case_insensitive():
    assert parse_vlm_reply("{' Left ': ['gate']}").cues == (NavCue("gate", "left"),)


@pytest.mark.parametrize("reply", ["no dict here", "['left', 'gate']", "{not: valid: at all}", "}{"])
def test_parse_unparseable(reply):
    with pytest.raises(UnparseableReply):
        parse_vlm_reply(reply)


def test_parse_own_format_round_trip():
    cues = NavCueSet((NavCue("gate", "left"), NavCue("café", "forward-then-right")), ("atrium",))
    assert parse_vlm_reply(format_instruction_dict(cues)) == cues


phrases = st.text(max_size=15).filter(lambda s: "`" not in s)


@given(st.dictionaries(phrases, st.lists(phrases, max_size=3), max_size=6))
def test_parse_stays_in_vocabulary(data):
    cues = parse_vlm_reply(repr(data))
    assert all(c.instruction in DIRECTIONAL for c in cues.cues)


def test_merge_majority_and_ties():
    history = [
        NavCueSet((NavCue("gate", "left"), NavCue("lobby", "forward"))),
        NavCueSet((NavCue("gate", "right"), NavCue("lobby", "backwards")), ("hall",)),
        NavCueSet((NavCue("gate", "left"),), ("hall", "atrium")),
    ]
    merged = merge_cues(history)
    assert merged.cues == (NavCue("gate", "left"), NavCue("lobby", "forward"))
    assert merged.locational == ("hall", "atrium")


def test_merge_empty_history():
    with pytest.raises(ValueError):
        merge_cues([])


@given(st.lists(st.lists(st.integers(0, len(DIRECTIONAL) - 1), min_size=0, max_size=3), min_size=1, max_size=9))
def test_merge_equals_brute_force_mode(draws):
    locations = ["gate", "lobby", "exit"]
    history = [NavCueSet(tuple(NavCue(locations[i], DIRECTIONAL[t]) for i, t in enumerate(row))) for row in draws]
    merged = {c.location: c.instruction for c in merge_cues(history).cues}

    for location in locations:
        seen = [c.instruction for cs in history for c in cs.cues if c.location == location]
        if not seen:
            assert location not in merged
            continue
        counts = Counter(seen)
        top = max(counts.values())
        expected = next(t for t in seen if counts[t] == top)
        assert merged[location] == expected, f"{location}: {seen}"


def test_merge_recovers_from_noise():
    rng = np.random.default_rng(5)
    hits = 0
    for _ in range(500):
        truth = DIRECTIONAL[int(rng.integers(len(DIRECTIONAL)))]
        history = []
        for _ in range(7):
            token = truth
            if rng.random() < 0.3:
                token = DIRECTIONAL[int(rng.integers(len(DIRECTIONAL)))]
            history.append(NavCueSet((NavCue("goal", token),)))
        hits += merge_cues(history).cues[0].instruction == truth
    assert hits / 500 > 0.9


def test_parse_request_layout():
    dictionary = SymbolDictionary(None, {"0": "left", "1": "up-stairs"})
    request = build_parse_request(b"\x89PNG-sign", dictionary)
    kinds = [type(p) for p in request.parts]
    assert kinds == [bytes, str, bytes, str]
    assert request.parts[2] == b"\x89PNG-sign"
    assert request.parts[3] == PARSE_PROMPT
    assert '"1":"up-stairs"' in request.parts[1]
    with pytest.raises(ValueError):
        build_parse_request(b"", dictionary)


def test_parse_prompt_lists_every_key():
    for token in Instruction:
        assert f"'{token.value}'" in PARSE_PROMPT
