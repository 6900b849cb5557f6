"""Utility modules for rbrelax.

Only the logger is re-exported here; config, validation and file helpers
are imported from their modules so that the physics layers can log without
pulling in the configuration schema.
"""

from src.utils.logger import Logger, get_logger, setup_logger

__all__ = [
    "Logger",
    "get_logger",
    "setup_logger",
]
