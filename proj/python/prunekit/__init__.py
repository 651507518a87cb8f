"""Magnitude-based weight pruning toolkit for toy transformers."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
