"""Learning Mori-Zwanzig operators by regression."""

__version__ = "0.1.0"
