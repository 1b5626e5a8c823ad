"""Parser for flat key=value run configuration files."""

import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .models.config import GROUPS, RunConfig

logger = logging.getLogger(__name__)

THREADS_ENV = "MPRF_THREADS"

# field name -> owning group; every field name is unique across groups
FIELD_GROUPS: Dict[str, str] = {
    name: group for group, model in GROUPS.items() for name in model.model_fields
}

# free-text fields keep the value exactly as written
RAW_FIELDS = frozenset(
    name for model in GROUPS.values() for name, field in model.model_fields.items()
    if field.annotation in (str, Optional[str])
)

# "#" opens a comment at line start or after whitespace only
_COMMENT = re.compile(r"(^|\s)#.*$")


def _typed(raw: str) -> Any:
    """Type a raw value the way YAML would ('true' -> bool, '1e-3' -> float, '' -> None)."""
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw
    if isinstance(value, str):
        # YAML 1.1 leaves '1e-3' as a string
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_assignment(line: str, where: str = "<override>") -> Optional[tuple]:
    """Split one ``key=value`` line; comments and blank lines give None."""
    content = _COMMENT.sub("", line.rstrip("\n")).strip()
    if not content:
        return None
    if "=" not in content:
        raise ConfigError(f"{where}: expected key=value, got '{line.strip()}'")
    key, _, value = content.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"{where}: missing key in '{line.strip()}'")
    if key in RAW_FIELDS:
        value = value.strip()
        return key, value or None
    return key, _typed(value)


class RunConfigParser:
    """Parse and validate run configuration files."""

    def __init__(self):
        self.parsed_config: Optional[RunConfig] = None

    def parse_file(self, filepath: Union[str, Path], overrides: Sequence[str] = ()) -> RunConfig:
        """
        Parse a config file, apply ``--set`` style overrides and validate.

        Args:
            filepath: Path to the key=value file
            overrides: ``key=value`` strings applied after the file

        Returns:
            Validated RunConfig object

        Raises:
            ConfigError: If the file is missing, malformed, or fails validation
        """
        filepath = Path(filepath)

        if not filepath.exists():
            raise ConfigError(f"File not found: {filepath}")

        with open(filepath, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()

        return self.parse_lines(lines, overrides, source=str(filepath))

    def parse_lines(self, lines: Iterable[str], overrides: Sequence[str] = (), source: str = "<string>") -> RunConfig:
        """
        Parse key=value lines; duplicate keys inside the file are errors.

        Args:
            lines: Config lines
            overrides: ``key=value`` strings applied afterwards
            source: Name used in error messages

        Returns:
            Validated RunConfig object
        """
        values: Dict[str, Any] = {}
        for number, line in enumerate(lines, 1):
            parsed = parse_assignment(line, f"{source}:{number}")
            if parsed is None:
                continue
            key, value = parsed
            if key in values:
                raise ConfigError(f"{source}:{number}: duplicate key '{key}'", key=key)
            values[key] = value
        for item in overrides:
            parsed = parse_assignment(item)
            if parsed is not None:
                values[parsed[0]] = parsed[1]
        return self.parse_dict(values)

    def parse_string(self, text: str, overrides: Sequence[str] = ()) -> RunConfig:
        return self.parse_lines(text.splitlines(), overrides)

    def parse_dict(self, data: Dict[str, Any]) -> RunConfig:
        """
        Route flat keys to their groups and validate.

        Args:
            data: Flat mapping of field name to value; None means "use the default"

        Returns:
            Validated RunConfig object

        Raises:
            ConfigError: On unknown keys or validation failures
        """
        grouped: Dict[str, Dict[str, Any]] = {group: {} for group in GROUPS}
        for key, value in data.items():
            group = FIELD_GROUPS.get(key)
            if group is None:
                raise ConfigError(f"Unknown config key '{key}'", key=key)
            if value is not None:
                grouped[group][key] = value
        try:
            self.parsed_config = RunConfig(**grouped)
        except ValidationError as e:
            errors = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
            first_key = next((str(err["loc"][-1]) for err in e.errors() if err["loc"]), None)
            raise ConfigError("Invalid configuration: " + "; ".join(errors), errors=errors, key=first_key) from e
        logger.debug("Parsed config: %s", self.parsed_config.model_dump())
        return self.parsed_config


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Write ``config`` back in the key=value format, one commented section per group."""
    lines = []
    for group in GROUPS:
        lines.append(f"# {group}")
        for name, value in getattr(config, group).model_dump().items():
            lines.append(f"{name}={_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def parse_run_config(filepath: Union[str, Path], overrides: Sequence[str] = ()) -> RunConfig:
    """
    Convenience function to parse a run config file.

    Args:
        filepath: Path to the config file
        overrides: ``key=value`` overrides

    Returns:
        Validated RunConfig object
    """
    parser = RunConfigParser()
    return parser.parse_file(filepath, overrides)


def threads_from_env(environ: Optional[Dict[str, str]] = None) -> int:
    """Worker thread cap from ``MPRF_THREADS`` (default 1)."""
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'", key=THREADS_ENV)
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'", key=THREADS_ENV)
    return threads
