"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from atomnav.datasets import MANIFEST, SEQUENCE_VERSION, RecordedSequence
from atomnav.errors import AtomNavError
from atomnav.evalutils import format_report, run_benchmark
from atomnav.exploration import ExploreConfig, SimAgent, explore, scan_in_place
from atomnav.grounding import GroundingConfig, GroundingQuery, ground_query
from atomnav.mapbuilder import BuilderConfig, MapBuilder, build
from atomnav.render import RENDER_VERSION, RenderConfig, render
from atomnav.scenemodel import ATOM_VERSION, read_atom, write_atom
from atomnav.simulator import SCENE_COPY, default_trajectory, emit_sequence, load_scene, load_trajectory, make_benchmark
from atomnav.utils import load_config
from atomnav.vlm import make_vlm

LOGGER = logging.getLogger("atomnav")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help="JSON config file merged over the defaults")
    common.add_argument('--verbose', action='store_true', help="Log debug messages")
    common.add_argument('--quiet', action='store_true', help="Log warnings only and hide progress bars")
    return common


def _vlm_args(parser: argparse.ArgumentParser):
    parser.add_argument('--vlm', type=str, help="VLM endpoint: oracle[:scene.json], replay:DIR or http[:URL]")
    parser.add_argument('--scene', type=str, help="Scene file of the oracle backend")
    parser.add_argument('--record', type=str, help="Directory to record every VLM exchange into")


def _atom_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="atom", description="Build, render and ground abstract top-view maps")
    parser.add_argument('--version', action='store_true', help="Print the schema versions")
    sub = parser.add_subparsers(dest="command", metavar="{build,render,ground,bench}")

    p = sub.add_parser('build', parents=[common], help="Fold a recorded sequence into a map")
    p.add_argument('--sequence', type=str, required=True, help="Sequence directory")
    p.add_argument('--out', type=str, required=True, help="Output *.atom.json")
    p.add_argument('--sibling-cloud', action='store_true', help="Store the path cloud in a *.cloud.bin sibling")
    _vlm_args(p)

    p = sub.add_parser('render', parents=[common], help="Render the sign-centric top view of one sign")
    p.add_argument('--atom', type=str, required=True, help="Input *.atom.json")
    p.add_argument('--sign', type=int, default=0, help="Id of the center sign")
    p.add_argument('--out', type=str, required=True, help="Output PNG")
    p.add_argument('--sidecar', type=str, help="Output sidecar JSON")
    p.add_argument('--no-align', action='store_true', help="Keep world axes, only center on the sign")

    p = sub.add_parser('ground', parents=[common], help="Ground a goal phrase in a map")
    p.add_argument('--atom', type=str, required=True, help="Input *.atom.json")
    p.add_argument('--query', type=str, required=True, help="Goal location phrase")
    p.add_argument('--grounder', type=str, choices=["geometric", "vlm"], help="Grounding method")
    p.add_argument('--choices', type=str, help="Benchmark query file with answer choices")
    p.add_argument('--sequence', type=str, help="Sequence the choice pixels refer to")
    _vlm_args(p)

    p = sub.add_parser('bench', parents=[common], help="Run the multiple-choice grounding benchmark")
    p.add_argument('--dataset', type=str, required=True, help="Directory of benchmark sequences")
    p.add_argument('--report', type=str, help="Output report JSON")
    p.add_argument('--grounder', type=str, choices=["geometric", "vlm"], help="Grounding method")
    p.add_argument('--vlm', type=str, help="VLM endpoint: oracle, replay:DIR or http[:URL]")
    p.add_argument('--jobs', type=int, help="Worker processes, all cores by default")
    return parser


def _sim_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="sim", description="Synthetic scenes for the sign grounding pipeline")
    parser.add_argument('--version', action='store_true', help="Print the schema versions")
    sub = parser.add_subparsers(dest="command", metavar="{gen,bench-gen,explore}")

    p = sub.add_parser('gen', parents=[common], help="Emit a recorded sequence of a scene")
    p.add_argument('--scene', type=str, required=True, help="Scene JSON")
    p.add_argument('--trajectory', type=str, help="JSON list of [x, y, yaw_deg], derived from the scene if missing")
    p.add_argument('--out', type=str, required=True, help="Output sequence directory")
    p.add_argument('--dt', type=float, default=1.0, help="Seconds between frames")

    p = sub.add_parser('bench-gen', parents=[common], help="Emit a sequence with multiple-choice queries")
    p.add_argument('--scene', type=str, required=True, help="Scene JSON")
    p.add_argument('--seed', type=int, default=7, help="Random seed of the query draw")
    p.add_argument('--out', type=str, required=True, help="Output sequence directory")
    p.add_argument('--n-queries', type=int, help="Queries per scene")

    p = sub.add_parser('explore', parents=[common], help="Scan and explore the frontiers around a sign")
    p.add_argument('--scene', type=str, required=True, help="Scene JSON")
    p.add_argument('--out', type=str, required=True, help="Output *.atom.json")
    p.add_argument('--log', type=str, help="Output visit log JSON")
    p.add_argument('--budget', type=int, help="Maximum number of frontier visits")
    p.add_argument('--vlm', type=str, help="VLM endpoint, the oracle of the scene by default")
    p.add_argument('--record', type=str, help="Directory to record every VLM exchange into")
    return parser


def _setup_logging(args: argparse.Namespace):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def _load_cfg(args: argparse.Namespace) -> Dict:
    overrides = {
        'grounding': {
            'grounder': getattr(args, "grounder", None)
        },
        'vlm': {
            'endpoint': getattr(args, "vlm", None)
        },
        'bench': {
            'jobs': getattr(args, "jobs", None),
            'n_queries': getattr(args, "n_queries", None)
        },
        'explore': {
            'budget': getattr(args, "budget", None)
        }
    }
    return load_config(args.config, overrides)


def _make_vlm(args: argparse.Namespace, cfg: Dict, fallback_scene: Optional[Path] = None):
    scene = Path(args.scene) if getattr(args, "scene", None) else fallback_scene
    return make_vlm(cfg["vlm"]["endpoint"],
                    scene_path=scene if scene is not None and scene.is_file() else None,
                    record_dir=Path(args.record) if args.record else None,
                    retries=cfg["vlm"]["retries"],
                    timeout=cfg["vlm"]["timeout"])


def _print_json(obj: Dict):
    print(json.dumps(obj, sort_keys=True, indent=2))


###############
# atom        #
###############


def build_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    seq_dir = Path(args.sequence)
    sequence = RecordedSequence(seq_dir)
    vlm = _make_vlm(args, cfg, fallback_scene=seq_dir / SCENE_COPY)
    atom = build(sequence, BuilderConfig.from_dict(cfg["builder"]), vlm, progress=not args.quiet)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_atom(atom, out, sibling_cloud=args.sibling_cloud)
    _print_json({
        "atom": str(out),
        "n_signs": len(atom.signs),
        "n_parsed_signs": sum(1 for s in atom.signs if len(s.merged_cues) > 0),
        "n_structures": len(atom.structures),
        "n_path_points": len(atom.path_cloud),
        "warnings": list(atom.warnings)
    })
    return 0


def render_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    atom = read_atom(Path(args.atom))
    render_cfg = RenderConfig.from_dict(cfg["render"])
    if args.no_align:
        render_cfg = RenderConfig.from_dict({**cfg["render"], "align_to_sign": False})
    result = render(atom, args.sign, render_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(result.image)
    if args.sidecar:
        with Path(args.sidecar).open("w") as fp:
            json.dump(result.sidecar, fp, sort_keys=True, indent=2)
    _print_json({
        "image": str(out),
        "center_sign_id": result.center_sign_id,
        "frontiers": [f.letter for f in result.frontiers],
        "boxes": [b.label for b in result.boxes]
    })
    return 0


def _load_query(args: argparse.Namespace) -> GroundingQuery:
    if not args.choices:
        return GroundingQuery(args.query)
    with Path(args.choices).open("r") as fp:
        records = json.load(fp)
    if isinstance(records, dict):
        records = [records]
    for record in records:
        if record.get("query") == args.query:
            return GroundingQuery.from_dict(record)
    if len(records) == 1:
        return GroundingQuery.from_dict({**records[0], "query": args.query})
    raise ValueError(f"No query '{args.query}' in {args.choices}")


def ground_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    atom = read_atom(Path(args.atom))
    query = _load_query(args)

    sequence = None
    if query.mode == "multiple-choice":
        seq_dir = Path(args.sequence) if args.sequence else Path(args.choices).parent
        if not (seq_dir / MANIFEST).is_file() and not args.sequence:
            raise ValueError("Multiple-choice queries need --sequence")
        sequence = RecordedSequence(seq_dir)

    grounding_cfg = GroundingConfig.from_dict(cfg["grounding"])
    vlm = None
    if grounding_cfg.grounder == "vlm":
        fallback = sequence.seq_dir / SCENE_COPY if sequence is not None else None
        vlm = _make_vlm(args, cfg, fallback_scene=fallback)
    result = ground_query(atom, query, grounding_cfg, RenderConfig.from_dict(cfg["render"]), vlm, sequence)
    _print_json(result.to_dict())
    return 0


def bench_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    report = run_benchmark(Path(args.dataset),
                           cfg=cfg,
                           jobs=cfg["bench"]["jobs"],
                           report_path=Path(args.report) if args.report else None,
                           progress=not args.quiet)
    print(format_report(report))
    return 0


###############
# sim         #
###############


def gen_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    scene = load_scene(Path(args.scene))
    trajectory = load_trajectory(Path(args.trajectory)) if args.trajectory else default_trajectory(scene)
    manifest = emit_sequence(scene, trajectory, Path(args.out), dt=args.dt)
    _print_json({"manifest": str(manifest), "n_frames": len(trajectory), "scene": scene.name})
    return 0


def bench_gen_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    scene = load_scene(Path(args.scene))
    manifest, queries = make_benchmark(scene, args.seed, Path(args.out), n_queries=cfg["bench"]["n_queries"])
    _print_json({"manifest": str(manifest), "n_queries": len(queries), "scene": scene.name})
    return 0


def explore_cmd(args: argparse.Namespace, cfg: Dict) -> int:
    scene_path = Path(args.scene)
    scene = load_scene(scene_path)
    explore_cfg = ExploreConfig.from_dict(cfg["explore"])
    render_cfg = RenderConfig.from_dict(cfg["render"])
    vlm = _make_vlm(args, cfg, fallback_scene=scene_path)

    agent = SimAgent.at_scan_pose(scene)
    builder = MapBuilder(BuilderConfig.from_dict(cfg["builder"]), vlm)
    scan_in_place(agent, builder, cfg=explore_cfg)
    atom, visits = explore(agent, builder, explore_cfg, render_cfg)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_atom(atom, out)
    if args.log:
        with Path(args.log).open("w") as fp:
            json.dump(visits, fp, sort_keys=True, indent=2)
    _print_json({"atom": str(out), "n_visits": len(visits), "visited": [v["letter"] for v in visits]})
    return 0


COMMANDS: Dict[str, Dict[str, Callable]] = {
    "atom": {
        "build": build_cmd,
        "render": render_cmd,
        "ground": ground_cmd,
        "bench": bench_cmd
    },
    "sim": {
        "gen": gen_cmd,
        "bench-gen": bench_gen_cmd,
        "explore": explore_cmd
    }
}

PARSERS = {"atom": _atom_parser, "sim": _sim_parser}


def _versions() -> Dict:
    return {"atom_version": ATOM_VERSION, "render_version": RENDER_VERSION, "sequence_version": SEQUENCE_VERSION}


def main(argv: Optional[List[str]] = None) -> int:
    """Run `atom ...` or `sim ...` and return the exit code.

    0 on success, 1 on usage errors, 2 on data errors and 3 on transport errors.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in PARSERS:
        sys.stderr.write("usage: main.py {atom,sim} ...\n")
        return 0 if argv and argv[0] in ("-h", "--help") else 1

    program = argv[0]
    parser = PARSERS[program]()
    try:
        args = parser.parse_args(argv[1:])
    except SystemExit as err:
        return int(err.code or 0)
    if args.version:
        _print_json(_versions())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    _setup_logging(args)
    try:
        cfg = _load_cfg(args)
        return COMMANDS[program][args.command](args, cfg)
    except AtomNavError as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return err.exit_code
    except (ValueError, json.JSONDecodeError) as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return 1
    except (KeyError, OSError) as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return 2


def atom(argv: Optional[List[str]] = None) -> int:
    return main(["atom"] + list(sys.argv[1:] if argv is None else argv))


def sim(argv: Optional[List[str]] = None) -> int:
    return main(["sim"] + list(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    sys.exit(main())
