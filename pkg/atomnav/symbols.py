"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import io
import json
import sys
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.patches import Circle, FancyArrowPatch

from .scenemodel import Instruction
from .utils import ASSETS_DIR

LABELS_FILE = ASSETS_DIR / "direction_labels.json"
SHEET_FILE = ASSETS_DIR / "symbol_dictionary.png"


@dataclass(frozen=True)
class SymbolDictionary:
    """Prototype sheet plus the labels of its numbered symbols.

    Parameters
    ----------
    image_ref : Path, optional
        PNG of the prototype sheet. If missing, the sheet is drawn from the labels.
    labels : Dict[str, str]
        Ordered map from symbol index to instruction token.
    """
    image_ref: Optional[Path]
    labels: Dict[str, str]

    def __post_init__(self):
        for index, token in self.labels.items():
            try:
                Instruction(token)
            except ValueError:
                raise ValueError(f"Symbol {index} has label '{token}', which is not an instruction token")
        object.__setattr__(self, "labels", OrderedDict(self.labels))

    def image_bytes(self) -> bytes:
        if self.image_ref is not None and Path(self.image_ref).is_file():
            return Path(self.image_ref).read_bytes()
        return _drawn_sheet(tuple(self.labels.items()))


@lru_cache(maxsize=8)
def _drawn_sheet(items: Tuple[Tuple[str, str], ...]) -> bytes:
    return draw_symbol_sheet(OrderedDict(items))


def load_symbol_dictionary(labels_file: Path = LABELS_FILE, image_file: Path = SHEET_FILE) -> SymbolDictionary:
    """Symbol dictionary with the shipped labels.

    Only the labels ship with the package. While `image_file` does not exist, the prototype
    sheet is drawn from the labels once per process and reused; `python -m atomnav.symbols`
    writes it to `assets/symbol_dictionary.png` so that it can be edited or replaced.
    """
    with Path(labels_file).open("r") as fp:
        labels = json.load(fp, object_pairs_hook=OrderedDict)
    return SymbolDictionary(image_ref=Path(image_file), labels=labels)


def _arrow(ax, start, end, **kwargs):
    ax.add_patch(FancyArrowPatch(start, end, arrowstyle="-|>", mutation_scale=14, lw=2.5, color="black",
                                 **kwargs))


def _draw_glyph(ax, token: Instruction):
    if token.is_locational:
        ax.add_patch(Circle((0.0, 0.1), 0.25, fill=False, lw=2.5))
        ax.plot([0.0, 0.0], [-0.15, -0.55], color="black", lw=2.5)
    elif token.is_structure:
        # staircase profile, escalators get a slanted handrail
        xs = np.repeat(np.linspace(-0.6, 0.6, 5), 2)[1:]
        ys = np.repeat(np.linspace(-0.5, 0.3, 5), 2)[:-1]
        ax.plot(xs, ys, color="black", lw=2)
        if token.structure_class == "escalator":
            ax.plot([-0.6, 0.6], [-0.25, 0.55], color="black", lw=1.5)
        if token.vertical_sense == "up":
            _arrow(ax, (-0.5, 0.0), (0.1, 0.6))
        else:
            _arrow(ax, (0.1, 0.6), (-0.5, 0.0))
    elif token.is_compound:
        first, second = (step.direction * 0.45 for step in token.steps)
        corner = -first * 0.5 + first
        start = corner - first
        ax.plot([start[0], corner[0]], [start[1], corner[1]], color="black", lw=2.5)
        _arrow(ax, tuple(corner), tuple(corner + second))
    else:
        d = token.direction * 0.6
        _arrow(ax, tuple(-d), tuple(d))


def draw_symbol_sheet(labels: Dict[str, str], columns: int = 6) -> bytes:
    """Draw the numbered prototype sheet for `labels` as PNG bytes."""
    n = max(len(labels), 1)
    rows = int(np.ceil(n / columns))
    fig = Figure(figsize=(columns * 1.2, rows * 1.4), dpi=100)
    canvas = FigureCanvasAgg(fig)
    for i, (index, token) in enumerate(labels.items()):
        ax = fig.add_subplot(rows, columns, i + 1)
        ax.set_xlim(-1, 1)
        ax.set_ylim(-1, 1)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
        _draw_glyph(ax, Instruction(token))
        ax.set_title(str(index), fontsize=11)
    buf = io.BytesIO()
    canvas.print_png(buf, metadata={"Software": None})
    return buf.getvalue()


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else SHEET_FILE
    out.write_bytes(draw_symbol_sheet(load_symbol_dictionary().labels))
