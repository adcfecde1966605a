"""Bounded symbolic execution of EVM runtime code."""

from snipcheck.symexec.engine import Env, Exploration, Limits, PathResult, explore
from snipcheck.symexec.state import Termination

__all__ = ["Env", "Exploration", "Limits", "PathResult", "Termination", "explore"]
