"""
Configuration Module

Environment driven settings for the toolkit. Values come from the process
environment, optionally seeded from a ``.env`` file in the working directory.
"""

import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from src.exceptions import ConfigError

# Load environment variables
load_dotenv()

DEFAULT_SEED = 42
DEFAULT_ACASXU_BASE_URL = (
    'https://raw.githubusercontent.com/guykatzz/ReluplexCav2017/master/nnet'
)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


@dataclass(frozen=True)
class Settings:
    """Process-wide settings read from the environment."""

    threads: int = 1
    log_dir: str = 'logs'
    log_level: str = 'INFO'
    cache_dir: str = 'cache'
    cache_days: int = 30
    acasxu_base_url: str = DEFAULT_ACASXU_BASE_URL
    acasxu_dir: Optional[str] = None


def get_settings() -> Settings:
    """
    Read the current settings from the environment.

    Returns:
        Settings: Settings with environment overrides applied
    """
    return Settings(
        threads=_int_env('REPAIR_THREADS', 1),
        log_dir=os.getenv('REPAIR_LOG_DIR', 'logs'),
        log_level=os.getenv('REPAIR_LOG_LEVEL', 'INFO'),
        cache_dir=os.getenv('REPAIR_CACHE_DIR', 'cache'),
        cache_days=_int_env('REPAIR_CACHE_DAYS', 30),
        acasxu_base_url=os.getenv('ACASXU_BASE_URL', DEFAULT_ACASXU_BASE_URL),
        acasxu_dir=os.getenv('ACASXU_DIR') or None,
    )
