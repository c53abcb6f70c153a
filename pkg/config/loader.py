"""
Configuration Loader for the GDA Kernel GAN toolkit

Loads configuration from config/config.yaml and provides easy access to settings.
An alternative file can be selected with the GDA_KERNEL_CONFIG environment variable
(a local .env file is honoured).
"""

import os
from pathlib import Path
from typing import Dict, Any

import yaml
from dotenv import load_dotenv

load_dotenv()

CONFIG_ENV_VAR = "GDA_KERNEL_CONFIG"


class ConfigManager:
    """Singleton configuration manager for the GDA kernel toolkit."""

    _instance = None
    _config = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if self._config is None:
            self._load_config()

    def _load_config(self):
        """Load configuration from config.yaml (or the file named by GDA_KERNEL_CONFIG)"""
        override = os.getenv(CONFIG_ENV_VAR)
        config_path = Path(override) if override else Path(__file__).parent / "config.yaml"

        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_path, 'r') as file:
            self._config = yaml.safe_load(file) or {}

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        Get configuration value using dot notation.

        Args:
            key_path: Dot-separated path (e.g., 'dynamics.merge_tol')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key_path.split('.')
        value = self._config

        try:
            for key in keys:
                value = value[key]
            return value
        except (KeyError, TypeError):
            return default

    def validate_configuration(self) -> Dict[str, bool]:
        """Validate that all required configuration sections are present."""
        required_sections = ['kernel', 'scenario', 'dynamics', 'oracle', 'experiments']
        return {section: isinstance(self.get(section), dict) for section in required_sections}

    def get_oracle_config(self) -> Dict[str, Any]:
        """Get Jacobian oracle settings"""
        return self.get('oracle', {})

    def get_experiment_defaults(self, experiment: str) -> Dict[str, Any]:
        """Get defaults for one experiment section"""
        return self.get(f'experiments.{experiment}', {})


# Global configuration instance
config = ConfigManager()


# Convenience functions for common configurations
def get_numerics_config() -> Dict[str, float]:
    """Flat view of the numerical tolerances used by the core modules"""
    return {
        'fd_step': float(config.get('kernel.fd_step', 1e-4)),
        'fd_tolerance_factor': float(config.get('kernel.fd_tolerance_factor', 10)),
        'isolation_eps': float(config.get('scenario.isolation_eps', 1e-8)),
        'equal_weight_tol': float(config.get('scenario.equal_weight_tol', 1e-12)),
        'merge_tol': float(config.get('dynamics.merge_tol', 1e-12)),
        'prune_tol': float(config.get('dynamics.prune_tol', 1e-15)),
        'divergence_factor': float(config.get('dynamics.divergence_factor', 1e6)),
    }


def get_experiment_defaults(experiment: str) -> Dict[str, Any]:
    """Get defaults for one experiment section"""
    return config.get_experiment_defaults(experiment)


def get_default_seed() -> int:
    """Get the CLI-level default seed"""
    return int(config.get('experiments.seed', 0))
