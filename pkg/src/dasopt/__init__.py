"""Deterministic simulator and algorithm library for asynchronous
multi-agent optimization over directed graphs."""

from . import augmented, engine, graph, harness, metrics, objectives, pushsum, schedule

__all__ = [
    "augmented", "engine", "graph", "harness", "metrics",
    "objectives", "pushsum", "schedule",
]

__version__ = "0.1.0"
