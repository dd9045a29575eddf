"""Discrete-action object-goal navigation stack on a simulated 2D differential-drive robot."""

__version__ = "0.1.0"
