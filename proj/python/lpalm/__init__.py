"""Tabular ALM oracle, SCAL training and verification utilities."""

from ._lpalm import *  # noqa: F401,F403
from ._lpalm import METRICS_HEADER, run, scal_train

__all__ = [name for name in dir() if not name.startswith("_")]
