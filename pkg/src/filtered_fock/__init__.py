"""Filtered quantum stochastic calculus on a truncated, time-discretized Fock space."""

from .fock import EMPTY, FULL, ExpState, Filter, FockError, GridSpec, OneParticleVector

__version__ = "0.1.0"

__all__ = ["EMPTY", "FULL", "ExpState", "Filter", "FockError", "GridSpec", "OneParticleVector"]
