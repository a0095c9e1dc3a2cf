"""Hybrid PID + residual reinforcement-learning process controller."""

__version__ = "0.1.0"
