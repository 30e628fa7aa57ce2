"""Offline embedding bundle and fixture generator for the command router."""

__version__ = "0.1.0"
