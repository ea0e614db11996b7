"""Kinetically constrained exclusion processes with gradient constraints."""

from .constraints import ModelSpec, compile_spec, parse_spec
from .errors import ConfigError, SizeError
from .lattice import Configuration, Window

__all__ = [
    "ConfigError",
    "Configuration",
    "ModelSpec",
    "SizeError",
    "Window",
    "compile_spec",
    "parse_spec",
]
__version__ = "0.1.0"
