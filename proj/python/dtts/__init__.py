"""Phoneme-to-mel acoustic model toolkit (C++ core)."""

from ._dtts import *  # noqa: F401,F403
from ._dtts import __doc__  # noqa: F401
