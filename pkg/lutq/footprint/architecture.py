"""Loading of declarative architecture files (JSON)."""

from __future__ import annotations

import json
import logging
from importlib import resources
from pathlib import Path
from typing import List, Union

from pydantic import ValidationError

from lutq.data_models import ArchitectureSpec
from lutq.errors import ConfigError

logger = logging.getLogger(__name__)

__all__ = ["load_architecture", "parse_architecture", "builtin_architecture", "builtin_names"]

_PACKAGE = "lutq.footprint"
_DIRECTORY = "architectures"


def parse_architecture(text: str, source: str = "<string>") -> ArchitectureSpec:
    """Validate *text*; any problem becomes a :class:`ConfigError` naming the field."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source} is not valid JSON: {exc}") from exc
    try:
        return ArchitectureSpec.model_validate(payload)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or None
        raise ConfigError(f"{source}: {error['msg']}", field=field) from exc


def builtin_names() -> List[str]:
    folder = resources.files(_PACKAGE).joinpath(_DIRECTORY)
    return sorted(entry.name[: -len(".json")] for entry in folder.iterdir() if entry.name.endswith(".json"))


def builtin_architecture(name: str) -> ArchitectureSpec:
    """Return one of the shipped architectures (``resnet20``, ``resnet18``, ...)."""
    entry = resources.files(_PACKAGE).joinpath(_DIRECTORY, f"{name}.json")
    if not entry.is_file():
        raise ConfigError(f"unknown architecture {name!r}; shipped: {', '.join(builtin_names())}")
    return parse_architecture(entry.read_text(encoding="utf-8"), source=name)


def load_architecture(path_or_name: Union[str, Path]) -> ArchitectureSpec:
    """Load an architecture file, falling back to a shipped name like ``resnet20``."""
    path = Path(path_or_name)
    if path.is_file():
        logger.debug("Loading architecture from %s", path)
        return parse_architecture(path.read_text(encoding="utf-8"), source=str(path))
    if path.suffix or path.parent != Path("."):
        raise ConfigError(f"architecture file {str(path)!r} does not exist")
    return builtin_architecture(str(path_or_name))
