"""Shared builders for the test suite."""

from __future__ import annotations

import math

import numpy as np

from filtered_fock.fock import ExpState, GridSpec, OneParticleVector

DEFAULT_GRID = GridSpec(1.0, 8, 3, 3, 2)


def random_u(grid: GridSpec, rng: np.random.Generator, scale: float = 0.7,
             colors: int | None = None) -> OneParticleVector:
    """Random step function with norm ``scale``, optionally on colors 1..colors."""
    c = rng.normal(size=(grid.n_cells, grid.n_colors)) + 1j * rng.normal(size=(grid.n_cells, grid.n_colors))
    if colors is not None:
        c[:, colors:] = 0
    u = OneParticleVector(grid, c)
    return u * (scale / u.norm())


def random_state(grid: GridSpec, rng: np.random.Generator, scale: float = 0.7,
                 colors: int | None = None, real_w: bool = False) -> ExpState:
    w = rng.normal(size=grid.h0_dim) + (0 if real_w else 1j * rng.normal(size=grid.h0_dim))
    return ExpState(w.astype(complex), random_u(grid, rng, scale, colors))


def exp_partial(z: complex, n: int) -> complex:
    """Degree-≤n Taylor sum of e^z, summed term by term."""
    return sum(z ** j / math.factorial(j) for j in range(n + 1))


def gronwall(c: float, t: float, a: float) -> float:
    """Discrete Gronwall envelope: f ≤ a + c∫f implies f(t) ≤ a e^{ct}."""
    return a * math.exp(c * t)


def lift(grid: GridSpec, u: OneParticleVector) -> OneParticleVector:
    return OneParticleVector(grid, u.coef)
