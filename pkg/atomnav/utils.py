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
from pathlib import Path
from typing import Any, Dict, List, Optional

LOGGER = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).absolute().parent.parent
DATA_DIR = ROOT_DIR / "data"
ASSETS_DIR = ROOT_DIR / "assets"

# settings that are not owned by one of the config dataclasses. The dataclasses
# (BuilderConfig, RenderConfig, GroundingConfig, ExploreConfig) carry their own defaults.
DEFAULT_SETTINGS = {
    'builder': {},
    'render': {},
    'grounding': {
        'grounder': 'geometric'
    },
    'explore': {},
    'vlm': {
        'endpoint': 'oracle',
        'retries': 3,
        'timeout': 60.0
    },
    'bench': {
        'jobs': None,
        'n_queries': 3
    }
}

# environment variable -> (section, key, type)
ENV_SETTINGS = {
    'ATOMNAV_VLM': ('vlm', 'endpoint', str),
    'ATOMNAV_JOBS': ('bench', 'jobs', int),
    'ATOMNAV_GROUNDER': ('grounding', 'grounder', str),
}


def canonical_dumps(obj: Any) -> str:
    """Deterministic compact JSON: sorted keys, no whitespace, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _merge_section(cfg: Dict, section: str, values: Dict, source: str):
    if section not in cfg:
        raise ValueError(f"Unknown config section '{section}' in {source}")
    if not isinstance(values, dict):
        raise ValueError(f"Config section '{section}' in {source} must be an object")
    for key, val in values.items():
        if val is not None:
            cfg[section][key] = val


def load_config(config_file: Optional[Path] = None,
                overrides: Optional[Dict[str, Dict]] = None,
                environ: Optional[Dict[str, str]] = None) -> Dict:
    """Layer the run configuration: flags > environment > file > defaults.

    Parameters
    ----------
    config_file : Path, optional
        JSON file with any of the sections of `DEFAULT_SETTINGS`.
    overrides : Dict[str, Dict], optional
        Values from command-line flags, per section. None values are ignored.
    environ : Dict[str, str], optional
        Environment to read, `os.environ` by default.

    Returns
    -------
    Dict
        Nested config dictionary.

    Raises
    ------
    ValueError
        If the file has unknown sections or an environment variable has the wrong type.
    """
    cfg = copy.deepcopy(DEFAULT_SETTINGS)

    if config_file is not None:
        with Path(config_file).open('r') as fp:
            file_cfg = json.load(fp)
        for section, values in file_cfg.items():
            _merge_section(cfg, section, values, str(config_file))

    environ = os.environ if environ is None else environ
    for var, (section, key, cast) in ENV_SETTINGS.items():
        if environ.get(var):
            try:
                cfg[section][key] = cast(environ[var])
            except ValueError:
                raise ValueError(f"Environment variable {var}={environ[var]!r} is not a valid {cast.__name__}")

    for section, values in (overrides or {}).items():
        _merge_section(cfg, section, values, "command line")

    return cfg


def dump_config(cfg: Dict, path: Path):
    """Store the effective config next to results."""
    with Path(path).open('w') as fp:
        json.dump(cfg, fp, sort_keys=True, indent=4, default=str)


def config_from_dict(cls, data: Optional[Dict]):
    """Instantiate a config dataclass, rejecting keys it does not know."""
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**data)


def get_scene_list() -> List[Path]:
    """Read the list of shipped benchmark scenes from text file.

    Returns
    -------
    List[Path]
        Paths to the scene JSON files, in list order.
    """
    scene_file = DATA_DIR / "scene_list.txt"
    with scene_file.open('r') as fp:
        names = [line.strip() for line in fp.readlines()]
    return [DATA_DIR / "scenes" / f"{name}.json" for name in names if name and not name.startswith("#")]
