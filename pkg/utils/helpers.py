import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import yaml

from core import ConfigError

TOOL_VERSION = "0.1.0"

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                   "config", "config.yaml")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from YAML file

    Args:
        config_path: Path to the config file (defaults to config/config.yaml)

    Returns:
        Configuration dictionary; empty when the file does not exist
    """
    config_path = config_path or DEFAULT_CONFIG_PATH
    try:
        with open(config_path, 'r', encoding='utf-8') as file:
            config = yaml.safe_load(file)
    except FileNotFoundError:
        logger.warning("Config file not found: %s, using built-in defaults", config_path)
        return {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing config file {config_path}: {e}") from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"Config file {config_path} must hold a mapping of sections")
    return config


def config_section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    """One named section of the config, always a dict"""
    section = config.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    return section


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Configure the root logger once per process

    Args:
        level: Log level name
        log_file: Optional file that receives the same records as stderr
    """
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level {level!r}")
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_dbkd_handler", False):
            root.removeHandler(handler)
            handler.close()
    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    stream._dbkd_handler = True
    root.addHandler(stream)
    if log_file:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        file_handler._dbkd_handler = True
        root.addHandler(file_handler)
    root.setLevel(numeric)


def atomic_write_text(path, text: str) -> None:
    """
    Write text so readers see either the old file or the complete new one

    Args:
        path: Destination file
        text: Full file contents
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix='.' + os.path.basename(path) + '.', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_path(output_path) -> str:
    return os.fspath(output_path) + ".manifest.json"


def write_manifest(output_path, manifest: Dict[str, Any]) -> str:
    """Write <output>.manifest.json next to a command's output"""
    body = dict(manifest)
    body.setdefault('tool_version', TOOL_VERSION)
    body.setdefault('written_at', datetime.now(timezone.utc).isoformat())
    path = manifest_path(output_path)
    atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return path


def format_seconds(seconds: float) -> str:
    """Readable duration for command summaries"""
    if seconds >= 3600:
        return f"{seconds / 3600:.1f}h"
    if seconds >= 60:
        return f"{seconds / 60:.1f}m"
    return f"{seconds:.2f}s"
