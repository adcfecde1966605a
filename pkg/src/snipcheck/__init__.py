"""Vulnerability detection for incomplete Solidity snippets."""

__version__ = "0.1.0"
