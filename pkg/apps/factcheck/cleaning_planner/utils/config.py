"""Configuration utilities.

This module provides utilities for loading and managing configuration.
"""

import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ValidationError

log = logging.getLogger(__name__)

ENV_PREFIX = "CLEANING_PLANNER_"


@dataclass
class PlannerConfig:
    """Configuration for the cleaning planner."""

    # Enumeration configuration
    enumeration_cap: int = 10**7

    # Monte Carlo configuration
    mc_samples: int = 20000
    mc_fallback: bool = True
    seed: int = 0

    # Solver configuration
    cost_scale: Optional[float] = None  # round costs to this resolution before a DP
    epsilon: float = 0.1

    # Experiment configuration
    workers: int = 4
    budget_points: int = 101
    repetitions: int = 100
    random_runs: int = 100

    # Logging configuration
    log_level: str = "INFO"

    # Metrics configuration
    metrics_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "PlannerConfig":
        """Create a PlannerConfig object from a dictionary.

        Args:
            config_dict: Dictionary containing configuration values

        Returns:
            PlannerConfig object

        Raises:
            ValidationError: If the dictionary holds unknown keys
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(config_dict) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**config_dict)

    def merged(self, **overrides: Any) -> "PlannerConfig":
        """Copy with the non-None overrides applied."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return PlannerConfig(**values)


_INT_KEYS = [
    "enumeration_cap",
    "mc_samples",
    "seed",
    "workers",
    "budget_points",
    "repetitions",
    "random_runs",
]
_FLOAT_KEYS = ["cost_scale", "epsilon"]
_BOOL_KEYS = ["mc_fallback"]
_STR_KEYS = ["log_level", "metrics_path"]


def _read_yaml(location: Path) -> Dict[str, Any]:
    with open(location, "r") as f:
        return yaml.safe_load(f) or {}


def load_config(config_path: Optional[str] = None) -> PlannerConfig:
    """Load configuration from file or environment variables.

    Args:
        config_path: Path to configuration file

    Returns:
        PlannerConfig object
    """
    # Default configuration
    config_data: Dict[str, Any] = {}

    # Try to load from file if specified
    if config_path:
        try:
            config_file = Path(config_path)
            if config_file.exists():
                config_data = _read_yaml(config_file)
                log.info(f"Loaded configuration from {config_path}")
        except Exception as e:
            log.warning(f"Failed to load configuration from {config_path}: {e}")

    # Try to load from default locations
    if not config_data:
        default_locations = [
            Path("cleaning_planner.yaml"),
            Path("~/.config/cleaning_planner/config.yaml").expanduser(),
            Path("/etc/cleaning_planner/config.yaml"),
        ]

        for location in default_locations:
            try:
                if location.exists():
                    config_data = _read_yaml(location)
                    log.info(f"Loaded configuration from {location}")
                    break
            except Exception as e:
                log.debug(f"Failed to load configuration from {location}: {e}")

    # Override with environment variables
    for config_key in _INT_KEYS + _FLOAT_KEYS + _BOOL_KEYS + _STR_KEYS:
        env_key = f"{ENV_PREFIX}{config_key.upper()}"
        if env_key not in os.environ:
            continue
        value = os.environ[env_key]

        # Convert to appropriate type
        try:
            if config_key in _INT_KEYS:
                config_data[config_key] = int(value)
            elif config_key in _FLOAT_KEYS:
                config_data[config_key] = float(value)
            elif config_key in _BOOL_KEYS:
                config_data[config_key] = value.lower() in ["true", "1", "yes"]
            else:
                config_data[config_key] = value
        except ValueError as e:
            raise ValidationError(f"{env_key}={value!r}: {e}") from e

    return PlannerConfig.from_dict(config_data)
