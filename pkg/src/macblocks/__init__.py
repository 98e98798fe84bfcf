"""Composable MAC protocol building blocks, a discrete-event simulator to
evaluate them, and a deep Q-learning agent that picks block combinations."""

__version__ = "0.1.0"
