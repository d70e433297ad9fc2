"""Indentation imprint inversion: from pile-up geometry and hardness to stress-strain curves."""

__version__ = "0.1.0"
