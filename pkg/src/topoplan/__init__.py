"""Multi-objective day-ahead grid topology planning toolkit."""

__version__ = "0.1.0"
