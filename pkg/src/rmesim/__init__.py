"""Simulator and lower-bound adversary for recoverable mutual exclusion."""

__version__ = "0.1.0"
