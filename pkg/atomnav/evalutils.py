"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import copy
import dataclasses
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from .datasets import MANIFEST, RecordedSequence
from .errors import AtomNavError, NotASequence
from .grounding import GroundingConfig, GroundingQuery, ground_geometric, ground_query
from .mapbuilder import BuilderConfig, build
from .metrics import majority_probability, success_rate
from .render import AtomRender, RenderConfig, render
from .scenemodel import INSTRUCTION_ORDER, AtomMap, Instruction, NavCue, NavCueSet, normalize_phrase
from .signparsing import merge_cues
from .simulator import QUERIES_FILE, SCENE_COPY, OracleVlm, SceneSpec, default_trajectory, emit_sequence
from .utils import DEFAULT_SETTINGS, dump_config
from .vlm import make_vlm

LOGGER = logging.getLogger(__name__)


def get_sequence_dirs(dataset_dir: Path) -> List[Path]:
    """All sequence directories of a benchmark dataset, sorted by name.

    Raises
    ------
    NotASequence
        If neither the directory nor any of its children holds a sequence manifest.
    """
    dataset_dir = Path(dataset_dir)
    dirs = sorted(p for p in dataset_dir.iterdir() if (p / MANIFEST).is_file()) if dataset_dir.is_dir() else []
    if not dirs and (dataset_dir / MANIFEST).is_file():
        dirs = [dataset_dir]
    if not dirs:
        raise NotASequence(f"No sequences found in {dataset_dir}")
    return dirs


def load_queries(seq_dir: Path) -> List[Dict]:
    path = Path(seq_dir) / QUERIES_FILE
    if not path.is_file():
        return []
    with path.open("r") as fp:
        return json.load(fp)


def parse_correct(atom: AtomMap, location: str, instruction: str) -> bool:
    """Whether some sign's merged cues give `instruction` for `location`."""
    location, instruction = normalize_phrase(location), Instruction(instruction)
    if instruction.is_locational:
        return any(location in sign.merged_cues.locational for sign in atom.signs)
    return any(cue.location == location and cue.instruction == instruction
               for sign in atom.signs for cue in sign.merged_cues.cues)


def _failed(query: Dict, reason: str) -> Dict:
    return {
        "query": query.get("query"),
        "truth": query.get("truth"),
        "answer": None,
        "correct": False,
        "reason": reason,
        "parse_correct": False if "truth_instruction" in query else None
    }


def evaluate_sequence(seq_dir: Path, cfg: Dict) -> Dict:
    """Build the map of one sequence and answer all of its queries.

    Failures never escape: a sequence that cannot be mapped fails all of its queries, a
    query that cannot be grounded fails alone. Both keep the reason.
    """
    seq_dir = Path(seq_dir)
    queries = load_queries(seq_dir)
    records = []
    try:
        scene_path = seq_dir / SCENE_COPY
        vlm = make_vlm(cfg["vlm"]["endpoint"],
                       scene_path=scene_path if scene_path.is_file() else None,
                       retries=cfg["vlm"]["retries"],
                       timeout=cfg["vlm"]["timeout"])
        sequence = RecordedSequence(seq_dir)
        atom = build(sequence, BuilderConfig.from_dict(cfg["builder"]), vlm, progress=False)
        grounding_cfg = GroundingConfig.from_dict(cfg["grounding"])
        render_cfg = RenderConfig.from_dict(cfg["render"])
    except (AtomNavError, ValueError) as err:
        reason = f"{type(err).__name__}: {err}"
        LOGGER.warning(f"Sequence {seq_dir.name} failed: {reason}")
        records = [_failed(q, reason) for q in queries]
    else:
        renders: Dict[int, AtomRender] = {}
        for q in queries:
            try:
                result = ground_query(atom, GroundingQuery.from_dict(q), grounding_cfg, render_cfg, vlm, sequence,
                                      renders)
            except (AtomNavError, ValueError, KeyError) as err:
                reason = f"{type(err).__name__}: {err}"
                LOGGER.warning(f"Query '{q.get('query')}' in {seq_dir.name} failed: {reason}")
                record = _failed(q, reason)
            else:
                record = {
                    "query": q["query"],
                    "truth": q.get("truth"),
                    "answer": result.answer,
                    "correct": result.answer is not None and result.answer == q.get("truth"),
                    "reason": None,
                    "sign_id": result.sign_id,
                    "matched_location": result.matched_location,
                    "instruction": result.instruction.value,
                    "parse_correct": None
                }
            if "truth_instruction" in q:
                record["parse_correct"] = parse_correct(atom, q["query"], q["truth_instruction"])
            records.append(record)

    parsed = [r["parse_correct"] for r in records if r["parse_correct"] is not None]
    return {
        "name": seq_dir.name,
        "queries": records,
        "correct": int(sum(r["correct"] for r in records)),
        "total": len(records),
        "parse_correct": int(sum(parsed)),
        "parse_total": len(parsed)
    }


def run_benchmark(dataset_dir: Path,
                  grounder: Optional[str] = None,
                  vlm: Optional[str] = None,
                  cfg: Optional[Dict] = None,
                  jobs: Optional[int] = None,
                  report_path: Optional[Path] = None,
                  progress: bool = True) -> Dict:
    """Multiple-choice grounding benchmark over every sequence of a dataset directory.

    Parameters
    ----------
    dataset_dir : Path
        Directory of sequence directories, each with a `queries.json`.
    grounder : str, optional
        'geometric' or 'vlm', overrides the config.
    vlm : str, optional
        VLM endpoint spec, overrides the config.
    cfg : Dict, optional
        Layered config as returned by `load_config`, the defaults if None.
    jobs : int, optional
        Worker processes. The report does not depend on it.
    report_path : Path, optional
        Where to write the JSON report. The effective config goes into `cfg.json` next to it.

    Returns
    -------
    Dict
        Per-sequence results and totals.
    """
    cfg = copy.deepcopy(cfg or DEFAULT_SETTINGS)
    if grounder is not None:
        cfg["grounding"]["grounder"] = grounder
    if vlm is not None:
        cfg["vlm"]["endpoint"] = vlm
    dirs = get_sequence_dirs(dataset_dir)
    jobs = jobs or cfg["bench"].get("jobs") or os.cpu_count() or 1

    if jobs == 1 or len(dirs) == 1:
        results = [evaluate_sequence(d, cfg) for d in tqdm(dirs, file=sys.stderr, disable=not progress)]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(dirs))) as pool:
            results = list(
                tqdm(pool.map(evaluate_sequence, dirs, repeat(cfg)), total=len(dirs), file=sys.stderr,
                     disable=not progress))

    correct = [r["correct"] for seq in results for r in seq["queries"]]
    parsed = [r["parse_correct"] for seq in results for r in seq["queries"] if r["parse_correct"] is not None]
    report = {
        "grounder": cfg["grounding"]["grounder"],
        "vlm": cfg["vlm"]["endpoint"],
        "sequences": results,
        "correct": int(sum(correct)),
        "total": len(correct),
        "success_rate": success_rate(correct) if correct else None,
        "parse_correct": int(sum(parsed)),
        "parse_total": len(parsed)
    }
    if report_path is not None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        with report_path.open("w") as fp:
            json.dump(report, fp, sort_keys=True, indent=4)
        dump_config(cfg, report_path.parent / "cfg.json")
    return report


def report_table(report: Dict) -> pd.DataFrame:
    """One row per sequence plus a Total row."""
    rows = [{
        "sequence": seq["name"],
        "correct": seq["correct"],
        "total": seq["total"],
        "parse_correct": seq["parse_correct"],
        "parse_total": seq["parse_total"]
    } for seq in report["sequences"]]
    df = pd.DataFrame(rows, columns=["sequence", "correct", "total", "parse_correct", "parse_total"])
    totals = df[["correct", "total", "parse_correct", "parse_total"]].sum()
    df.loc[len(df)] = ["Total", *[int(v) for v in totals]]
    df = df.set_index("sequence")
    with np.errstate(divide="ignore", invalid="ignore"):
        df["success_rate"] = df["correct"] / df["total"]
    return df


def format_report(report: Dict) -> str:
    df = report_table(report)
    return df.to_string(float_format=lambda v: f"{v:.3f}")


def _world_selection(render_: AtomRender, cue: NavCue):
    try:
        selection = ground_geometric(render_, cue)
    except AtomNavError:
        return None, None
    if selection.point is None:
        return selection.kind, None
    return selection.kind, render_.frame.inverse().apply(selection.point)


def alignment_ablation(scene: SceneSpec, cfg: Optional[Dict] = None, flip_dist: float = 0.5) -> pd.DataFrame:
    """Geometric grounding with and without the sign-frame rotation, per cue of every parsed sign.

    A cue flips when the two renders select different kinds of element or elements more
    than `flip_dist` apart in the world.
    """
    cfg = cfg or DEFAULT_SETTINGS
    render_cfg = RenderConfig.from_dict(cfg["render"])
    with tempfile.TemporaryDirectory() as tmp:
        emit_sequence(scene, default_trajectory(scene), Path(tmp))
        atom = build(RecordedSequence(Path(tmp)), BuilderConfig.from_dict(cfg["builder"]), OracleVlm(scene),
                     progress=False)

    rows = []
    for sign in atom.signs:
        if not sign.merged_cues.cues:
            continue
        aligned = render(atom, sign.id, dataclasses.replace(render_cfg, align_to_sign=True))
        plain = render(atom, sign.id, dataclasses.replace(render_cfg, align_to_sign=False))
        n = sign.normal[:2] / np.linalg.norm(sign.normal[:2])
        deviation = float(np.degrees(np.arccos(np.clip(-n[1], -1.0, 1.0))))
        for cue in sign.merged_cues.cues:
            kind_a, point_a = _world_selection(aligned, cue)
            kind_p, point_p = _world_selection(plain, cue)
            if point_a is None or point_p is None:
                flipped = kind_a != kind_p or point_a is not point_p
            else:
                flipped = kind_a != kind_p or float(np.linalg.norm(point_a - point_p)) > flip_dist
            rows.append({
                "scene": scene.name,
                "sign_id": sign.id,
                "location": cue.location,
                "instruction": cue.instruction.value,
                "normal_deviation_deg": deviation,
                "flipped": bool(flipped)
            })
    return pd.DataFrame(rows, columns=["scene", "sign_id", "location", "instruction", "normal_deviation_deg", "flipped"])


def merge_robustness(p: float = 0.3, n: int = 7, trials: int = 10000, seed: int = 0) -> Dict:
    """Accuracy of cue merging on seeded histories with per-frame corruption probability `p`.

    Every trial draws a true instruction and `n` parses of it, each replaced by a uniformly
    drawn other instruction with probability `p`, and merges them.
    """
    tokens = [t for t in INSTRUCTION_ORDER if not t.is_locational]
    rng = np.random.default_rng(seed)
    truth = rng.integers(len(tokens), size=trials)
    corrupt = rng.random((trials, n)) < p
    offsets = rng.integers(1, len(tokens), size=(trials, n))
    votes = np.where(corrupt, (truth[:, None] + offsets) % len(tokens), truth[:, None])

    merged_ok = 0
    for i in range(trials):
        history = [NavCueSet((NavCue("goal", tokens[v]),)) for v in votes[i]]
        merged_ok += merge_cues(history).cues[0].instruction == tokens[truth[i]]
    return {
        "p": float(p),
        "n": int(n),
        "trials": int(trials),
        "merged_accuracy": merged_ok / trials,
        "single_frame_accuracy": float(np.mean(votes == truth[:, None])),
        "majority_reference": majority_probability(1.0 - p, n)
    }
