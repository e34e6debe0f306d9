"""Preference-steered diffusion planning on a toy hopping environment."""

from . import _malloc

_malloc.tune()

__version__ = "0.1.0"
