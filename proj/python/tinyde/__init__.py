"""Tiny deep ensembles: members share every weight and differ only in their
normalization parameters."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
