"""QMIX with semantic epsilon-greedy exploration, plus the coordination-game experiments."""

__version__ = "0.1.0"
