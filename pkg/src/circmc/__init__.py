"""Circularly-coupled Markov chain sampling.

Coupled transition kernels driven by replayable time-indexed random streams,
a wrap-around coupling engine (sequential, diagnostic, and parallel), and
analysis tools for coalescence behaviour.
"""

from . import analysis, engine, kernels, logistic, streams, targets

__all__ = ["analysis", "engine", "kernels", "logistic", "streams", "targets"]
__version__ = "0.1.0"
