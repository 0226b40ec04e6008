#!/usr/bin/env python3
"""
Config loader - key = value files and command-line overrides into ShapeFitConfig.

File format:

    # comment
    zeta = 75
    sampling.fine_cell = 8
    grid.dims = [60, 40, 60]

Undotted keys name SolverConfig fields, except the top-level ones (shape_dim,
seed). Values are read as JSON where possible (numbers, true/false, lists) and
kept as strings otherwise. Problems are collected in validation_warnings; the
offending key keeps its default and loading carries on.
"""
import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from . import logger
from .config_models import ShapeFitConfig

SECTIONS = ("solver", "sampling", "grid", "render")
TOP_LEVEL_KEYS = ("shape_dim", "seed")


def parse_value(text: str) -> Any:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def split_key(key: str) -> Tuple[Optional[str], str]:
    """Dotted key -> (section, field); (None, field) for top-level keys."""
    key = key.strip()
    if "." in key:
        section, _, name = key.partition(".")
        return section, name
    if key in TOP_LEVEL_KEYS:
        return None, key
    return "solver", key


class ShapeFitConfigLoader:
    """
    Loads a ShapeFitConfig from an optional key = value file plus overrides.

    Every accepted assignment is validated on its own, so one bad line never
    discards the rest of the file.
    """

    def __init__(self):
        self.validation_warnings: List[str] = []
        self._data: Dict[str, Any] = {}

    def load(self, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Mapping[str, Any]] = None) -> ShapeFitConfig:
        self.validation_warnings = []
        self._data = {}
        if path is not None:
            for key, value, where in self._read_file(Path(path)):
                self._assign(key, value, where)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            self._assign(key, parse_value(value) if isinstance(value, str) else value, "override")
        for warning in self.validation_warnings:
            logger.warning(warning)
        return ShapeFitConfig.model_validate(self._data)

    def _read_file(self, path: Path):
        if not path.is_file():
            self.validation_warnings.append(f"Config file not found: {path}")
            return
        for number, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                self.validation_warnings.append(f"{path}:{number}: expected key = value")
                continue
            key, _, value = line.partition("=")
            yield key.strip(), parse_value(value), f"{path}:{number}"

    def _assign(self, key: str, value: Any, where: str) -> None:
        section, name = split_key(key)
        if section is not None and section not in SECTIONS:
            self.validation_warnings.append(f"{where}: unknown section {section!r} in {key!r}")
            return
        candidate = copy.deepcopy(self._data)
        target = candidate if section is None else candidate.setdefault(section, {})
        target[name] = value
        try:
            ShapeFitConfig.model_validate(candidate)
        except ValidationError as e:
            problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
            self.validation_warnings.append(f"{where}: {key} = {value!r} rejected ({problems})")
            return
        self._data = candidate


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> Tuple[ShapeFitConfig, List[str]]:
    """Config plus the warnings collected while loading it."""
    loader = ShapeFitConfigLoader()
    config = loader.load(path, overrides)
    return config, loader.validation_warnings


def format_config(config: ShapeFitConfig) -> str:
    """key = value text that load_config reads back to the same config."""
    lines = []
    data = config.model_dump(mode="json")
    for key in TOP_LEVEL_KEYS:
        lines.append(f"{key} = {json.dumps(data[key])}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"# {section}")
        for name, value in data[section].items():
            key = name if section == "solver" else f"{section}.{name}"
            lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"
