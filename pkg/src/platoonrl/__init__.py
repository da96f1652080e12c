"""Deterministic 2D platoon-driving simulator and PPO training stack."""

__version__ = "0.1.0"
