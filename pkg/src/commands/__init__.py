"""Command modules for the rbrelax CLI."""

from src.commands.figures import execute_figures
from src.commands.fit import execute_fit
from src.commands.simulate import execute_simulate
from src.commands.sweep import execute_sweep
from src.commands.validate import execute_validate

__all__ = [
    "execute_simulate",
    "execute_sweep",
    "execute_fit",
    "execute_figures",
    "execute_validate",
]
