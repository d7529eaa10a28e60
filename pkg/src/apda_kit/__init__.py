"""Adaptive primal-dual splitting for saddle-point problems with locally smooth terms."""

__version__ = "0.1.0"
