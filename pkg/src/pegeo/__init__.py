"""Positional-embedding probing toolkit for vision transformers."""
from .grid import GridShape, InvalidArgument, TokenGrid

__version__ = "0.1.0"

__all__ = ["GridShape", "InvalidArgument", "TokenGrid", "__version__"]
