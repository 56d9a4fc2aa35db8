"""
Configuration module for btn-sim
Centralized environment variable management for runtime settings
"""

import os
from dataclasses import dataclass, field
from typing import Optional

from dotenv import load_dotenv


load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


@dataclass
class Settings:
    """Runtime settings from environment variables.

    Simulation parameters (kappa, gamma, grid, ...) live in the scenario file,
    not here.
    """

    # Logging
    LOG_LEVEL: str = field(default_factory=lambda: os.getenv('BTN_LOG_LEVEL', 'info').lower())
    LOG_FILE: Optional[str] = field(default_factory=lambda: os.getenv('BTN_LOG_FILE') or None)

    # Output
    OUTPUT_DIR: str = field(default_factory=lambda: os.getenv('BTN_OUTPUT_DIR', './runs'))

    # Run registry
    DATABASE_URL: str = field(default_factory=lambda: os.getenv('BTN_DATABASE_URL', 'sqlite:///./btn-runs.db'))
    ENABLE_REGISTRY: bool = field(default_factory=lambda: _env_bool('BTN_ENABLE_REGISTRY', 'true'))
    ENABLE_RESULT_CACHE: bool = field(default_factory=lambda: _env_bool('BTN_ENABLE_RESULT_CACHE', 'true'))

    # Sweeps
    SWEEP_WORKERS: int = field(default_factory=lambda: int(os.getenv('BTN_SWEEP_WORKERS', '1')))

    # Linear solvers
    CG_ITERATION_FACTOR: float = field(default_factory=lambda: float(os.getenv('BTN_CG_ITERATION_FACTOR', '20')))
    DENSE_SOLVE_LIMIT: int = field(default_factory=lambda: int(os.getenv('BTN_DENSE_SOLVE_LIMIT', '4096')))

    def __post_init__(self):
        """Clamp values that would make the solvers meaningless."""
        self.SWEEP_WORKERS = max(1, self.SWEEP_WORKERS)
        self.CG_ITERATION_FACTOR = max(1.0, self.CG_ITERATION_FACTOR)

    @property
    def database_path(self) -> str:
        """Filesystem path of the registry database."""
        return self.DATABASE_URL.replace('sqlite:///', '')

    def to_dict(self) -> dict:
        """Convert settings to dictionary for logging/display."""
        return {
            'log_level': self.LOG_LEVEL,
            'output_dir': self.OUTPUT_DIR,
            'database_url': self.DATABASE_URL,
            'enable_registry': self.ENABLE_REGISTRY,
            'enable_result_cache': self.ENABLE_RESULT_CACHE,
            'sweep_workers': self.SWEEP_WORKERS,
            'cg_iteration_factor': self.CG_ITERATION_FACTOR,
            'dense_solve_limit': self.DENSE_SOLVE_LIMIT,
        }


# Global settings instance
settings = Settings()
