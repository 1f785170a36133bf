"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io

import pytest
from PIL import Image

from atomnav.scenemodel import Instruction
from atomnav.symbols import SymbolDictionary, draw_symbol_sheet, load_symbol_dictionary


def test_shipped_labels_cover_vocabulary():
    dictionary = load_symbol_dictionary()
    assert sorted(dictionary.labels.values()) == sorted(t.value for t in Instruction)
    assert list(dictionary.labels)[:3] == ["0", "1", "2"]


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        SymbolDictionary(None, {"0": "sideways"})


def test_sheet_is_drawn_when_missing(tmp_path):
    dictionary = SymbolDictionary(tmp_path / "missing.png", {"0": "left", "1": "down-escalator"})
    data = dictionary.image_bytes()
    with Image.open(io.BytesIO(data)) as img:
        assert img.format == "PNG"
        assert img.size[0] > img.size[1]


def test_sheet_file_is_used(tmp_path):
    sheet = tmp_path / "sheet.png"
    sheet.write_bytes(b"\x89PNG fake")
    assert SymbolDictionary(sheet, {"0": "left"}).image_bytes() == b"\x89PNG fake"


def test_sheet_is_deterministic():
    labels = {str(i): t.value for i, t in enumerate(Instruction)}
    assert draw_symbol_sheet(labels) == draw_symbol_sheet(labels)


def test_missing_sheet_file_is_generated_once(tmp_path):
    dictionary = load_symbol_dictionary(image_file=tmp_path / "none.png")
    sheet = dictionary.image_bytes()
    assert sheet[:8] == b"\x89PNG\r\n\x1a\n"
    assert dictionary.image_bytes() is sheet
    assert not (tmp_path / "none.png").exists()
