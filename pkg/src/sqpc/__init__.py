"""Seedable simulator for semiquantum private comparison via cavity QED."""

from .errors import InsufficientKeyMaterial, InvalidArgument

__version__ = "0.1.0"

__all__ = ["InvalidArgument", "InsufficientKeyMaterial", "__version__"]
