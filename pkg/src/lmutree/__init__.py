"""Linear model U-trees for mimicking reinforcement-learning Q-functions."""

__version__ = "0.1.0"
