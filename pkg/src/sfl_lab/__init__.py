"""Deterministic simulator for split federated learning and its baselines."""

__version__ = "0.1.0"
