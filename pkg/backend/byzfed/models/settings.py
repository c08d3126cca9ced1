"""
Runtime settings management
Process-level knobs (logging, listening address, socket timeout) read from
an optional YAML file and the environment, environment taking precedence
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

DEFAULT_PORT = 47600

# Try /usr/dataconfig first (container), fallback to current directory
SETTINGS_FILE = (
    "/usr/dataconfig/byzfed_config.yml"
    if os.path.exists("/usr/dataconfig/byzfed_config.yml")
    else "byzfed_config.yml"
)

_ENV_KEYS = {
    "BYZFED_HOST": "host",
    "BYZFED_PORT": "port",
    "BYZFED_LOG_LEVEL": "log_level",
    "BYZFED_LOG_FILE": "log_file",
    "BYZFED_SOCKET_TIMEOUT": "socket_timeout_s",
}


class RuntimeSettings(BaseModel):
    """Settings that do not change the math of a run"""
    host: str = Field("127.0.0.1", description="Loopback address the server binds")
    port: int = Field(DEFAULT_PORT, ge=0, le=65535, description="Listening port")
    log_level: str = Field("INFO", description="Logging level name")
    log_file: Optional[str] = Field(None, description="Optional log file")
    socket_timeout_s: float = Field(60.0, gt=0.0, description="Per-operation socket timeout")


def load_settings(path: Optional[str] = None) -> RuntimeSettings:
    """
    Load runtime settings

    Args:
        path: YAML file to read; defaults to SETTINGS_FILE when it exists

    Returns:
        RuntimeSettings with environment overrides applied
    """
    load_dotenv()

    values: Dict[str, Any] = {}
    settings_path = Path(path or SETTINGS_FILE)
    if settings_path.exists():
        logger.debug(f"Loading runtime settings from: {settings_path}")
        with open(settings_path, "r") as f:
            values.update((yaml.safe_load(f) or {}).get("runtime", {}))

    for env_key, field in _ENV_KEYS.items():
        raw = os.environ.get(env_key)
        if raw:
            values[field] = raw

    return RuntimeSettings(**values)


# Global settings instance
_settings: Optional[RuntimeSettings] = None


def get_settings() -> RuntimeSettings:
    """Get or load the process-wide runtime settings"""
    global _settings
    if _settings is None:
        _settings = load_settings()
    return _settings


def reset_settings():
    """Forget cached settings so the next get_settings() reloads them"""
    global _settings
    _settings = None
