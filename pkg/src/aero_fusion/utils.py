import logging
import os
from collections import OrderedDict
from pathlib import Path

import yaml
import yamlloader

logger = logging.getLogger(__name__)

OUTPUT_ENVIRONMENT_VARIABLE = "AERO_FUSION_OUTPUT"
DEFAULT_OUTPUT = "fusion_output"


def default_output_directory():
    """The output root: $AERO_FUSION_OUTPUT if set, otherwise ./fusion_output"""
    return os.environ.get(OUTPUT_ENVIRONMENT_VARIABLE, DEFAULT_OUTPUT)


class OutputLayout:
    """Fixed directory layout of a fusion run

    Parameters
    ----------
    root: str or Path
        Output root; sub directories data/, aligned/, checkpoints/, reports/ and fused/ are
        created below it on demand

    """

    def __init__(self, root):
        self.root = Path(root)
        self.data = self.root / "data"
        self.aligned = self.root / "aligned"
        self.checkpoints = self.root / "checkpoints"
        self.reports = self.root / "reports"
        self.fused = self.root / "fused"

    def make(self, *directories):
        for directory in directories:
            directory.mkdir(parents=True, exist_ok=True)

    @property
    def lf_csv(self):
        return self.data / "lf.csv"

    @property
    def hf_csv(self):
        return self.data / "hf.csv"

    @property
    def data_schema(self):
        return self.data / "schema.yml"

    @property
    def aligned_csv(self):
        return self.aligned / "aligned.csv"

    @property
    def aligned_schema(self):
        return self.aligned / "schema.yml"

    @property
    def checkpoint(self):
        return self.checkpoints / "lgfnet.ckpt"

    @property
    def fused_csv(self):
        return self.fused / "fused.csv"

    @property
    def split_csv(self):
        return self.reports / "split.csv"

    def report(self, file_name):
        return self.reports / file_name


def read_settings(path):
    """Read a yaml settings file into an ordered dictionary; None gives an empty one"""
    if path is None:
        return OrderedDict()
    logger.info("Reading settings file {}".format(path))
    with open(path, "r", encoding="utf-8") as stream:
        settings = yaml.load(stream=stream, Loader=yamlloader.ordereddict.CSafeLoader)
    return settings or OrderedDict()


def plain(value):
    """Turn ordered dictionaries, tuples and numpy scalars into plain yaml-friendly objects"""
    if isinstance(value, dict):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def write_settings(settings, path):
    with open(path, "w", encoding="utf-8") as stream:
        yaml.safe_dump(plain(settings), stream, sort_keys=False, default_flow_style=False)


def resolve_section(defaults, file_section=None, overrides=None, section="settings"):
    """
    Merge one settings section: flags over settings file over built-in defaults

    Parameters
    ----------
    defaults: dict
        Built-in defaults; their keys are the only keys allowed
    file_section: dict or None
        The section as read from the settings file
    overrides: dict or None
        Values given on the command line; entries that are None are ignored
    section: str
        Name of the section, used in the error message

    Raises
    ------
    KeyError:
        If the settings file holds a key that is not known
    """
    resolved = OrderedDict(defaults)
    for key, value in (file_section or {}).items():
        if key not in defaults:
            raise KeyError(f"Unknown key '{key}' in section '{section}'. Please pick one of: "
                           f"{list(defaults.keys())}")
        resolved[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            resolved[key] = value
    return resolved
