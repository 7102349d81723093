"""nadac: online identification and adaptive control for stochastic systems
of the form x_{t+1} = f(A x_t + B u_t) + w_{t+1}."""

from . import control, estimator, maps, metrics, simulate

__all__ = ["control", "estimator", "maps", "metrics", "simulate"]

__version__ = "0.1.0"
