"""Averaging with a bifurcating simplex of invariant measures: fast-slow
simulation, limiting processes on a three-edge graph, spectral limits and
statistical verification."""

__version__ = "0.1.0"
