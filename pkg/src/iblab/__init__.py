"""Information bottleneck laboratory: estimators, solvers, objectives, attacks."""

__version__ = "0.1.0"
