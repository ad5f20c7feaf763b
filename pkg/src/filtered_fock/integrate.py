"""Stochastic integrals of simple filtered-adapted biprocesses.

Two independent evaluations are provided.  The *defining sum* builds the
operator ``Σ_cells F(c) ΔA_c G(c)`` on the truncated space, one grid cell at
a time so that refining a partition reproduces the same floating-point sum.
The *fast formula* integrates ``⟨x, F G y⟩`` against the cell masses of a
complex density times a 0-1 color multiplier.  Their difference is bounded by
a truncation tail ``τ`` computed from the operators' growth metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .biprocess import Biprocess, SimpleBiprocess, as_biprocess, rewrite_for_summand
from .fock import (
    ZERO_BOUND,
    ExpState,
    Filter,
    FockError,
    GridSpec,
    OneParticleVector,
    OpBound,
    SparseOperator,
    color_projection,
    zero,
)
from .processes import FilteredKind, ProcessKind, Summand, cell_increment

Integrator = ProcessKind | FilteredKind | Summand


# --------------------------------------------------------------------------
# Measures
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasureDensity:
    """A complex density, constant on each grid cell."""

    grid: GridSpec
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=complex).reshape(-1)
        if d.shape != (self.grid.n_cells,):
            raise FockError(f"density needs {self.grid.n_cells} cell values, got {d.shape}")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @classmethod
    def zero(cls, grid: GridSpec) -> "MeasureDensity":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def lebesgue(cls, grid: GridSpec) -> "MeasureDensity":
        return cls(grid, np.ones(grid.n_cells))

    @property
    def masses(self) -> np.ndarray:
        """Mass of every cell."""
        return self.density * self.grid.dt

    def mass(self, s: float = 0.0, t: float | None = None) -> complex:
        a = self.grid.cell_of(s)
        b = self.grid.n_cells if t is None else self.grid.cell_of(t)
        return complex(self.masses[a:b].sum())

    def variation(self) -> "MeasureDensity":
        return MeasureDensity(self.grid, np.abs(self.density))

    def __add__(self, other: "MeasureDensity") -> "MeasureDensity":
        return MeasureDensity(self.grid, self.density + other.density)

    def __sub__(self, other: "MeasureDensity") -> "MeasureDensity":
        return MeasureDensity(self.grid, self.density - other.density)

    def scale(self, a: complex) -> "MeasureDensity":
        return MeasureDensity(self.grid, a * self.density)

    __mul__ = scale
    __rmul__ = scale


def _color(u: OneParticleVector, k: int) -> np.ndarray:
    return u.coef[:, u.grid.check_color(k) - 1]


def mu(kind: ProcessKind, u: OneParticleVector, v: OneParticleVector) -> MeasureDensity:
    """µ^η for the pair (u, v): v^(k), conj u^(k), conj(u^(k)) v^(k) or 1."""
    g = u.grid
    if kind.sort == "time":
        return MeasureDensity.lebesgue(g)
    if kind.sort == "ann":
        return MeasureDensity(g, _color(v, kind.k))
    if kind.sort == "cre":
        return MeasureDensity(g, np.conj(_color(u, kind.k)))
    return MeasureDensity(g, np.conj(_color(u, kind.k)) * _color(v, kind.k))


def multiplier(kind: ProcessKind, D: Filter, E: Filter) -> int:
    """The 0-1 color multiplier 1^η_{D,E}."""
    if kind.sort == "time":
        return 1
    k = kind.k
    if kind.sort == "ann":
        return int(k in E)
    if kind.sort == "cre":
        return int(k in D)
    return int(k in D and k in E)


def filtered_mu(kind: ProcessKind, D: Filter, E: Filter, u: OneParticleVector,
                v: OneParticleVector) -> MeasureDensity:
    return mu(kind, u, v).scale(multiplier(kind, D, E))


def nu_u(u: OneParticleVector) -> MeasureDensity:
    """Density of ν_u: Σ_k |u^(k)|² + 1."""
    return MeasureDensity(u.grid, (np.abs(u.coef) ** 2).sum(axis=1) + 1.0)


# --------------------------------------------------------------------------
# Defining sums
# --------------------------------------------------------------------------


def normalize(X: SimpleBiprocess | Biprocess, integrator: Integrator) -> tuple[Biprocess, ProcessKind]:
    """Rewrite a filtered or projected integrator into a CCR integrator."""
    if isinstance(integrator, ProcessKind):
        return as_biprocess(X), integrator
    if isinstance(integrator, FilteredKind):
        integrator = integrator.summand
    return rewrite_for_summand(X, integrator), integrator.kind


def cell_terms(X: Biprocess, t: float | None = None):
    """(cell, F, G) for every term and every grid cell before t."""
    for T in X.terms:
        for a, b, F, G in T.pieces(t):
            for c in range(a, b):
                yield T, c, F, G


@dataclass(frozen=True, eq=False)
class IntegralResult:
    operator: SparseOperator
    provenance: str
    filter: Filter
    bound: OpBound


def _filter_of(X: Biprocess) -> Filter:
    out = None
    for T in X.terms:
        out = T.D & T.E if out is None else out | (T.D & T.E)
    return Filter(None) if out is None else out


def integral_defining_sum(X: SimpleBiprocess | Biprocess, integrator: Integrator,
                          t: float) -> IntegralResult:
    """Σ_cells F(c) (A^η_{t_{c+1}} − A^η_{t_c}) G(c) over cells before t."""
    Xb, kind = normalize(X, integrator)
    if not Xb.terms:
        raise FockError("empty biprocess")
    grid = Xb.terms[0].grid
    grid.cell_of(t)
    total = zero(grid)
    bound = ZERO_BOUND
    for _, c, F, G in cell_terms(Xb, t):
        term = F @ cell_increment(kind, c, c + 1, grid) @ G
        total = total + term
        bound = bound + term.bound
    return IntegralResult(total, "defining-sum", _filter_of(Xb), bound)


def integral_bound(X: SimpleBiprocess | Biprocess, integrator: Integrator, t: float) -> OpBound:
    Xb, kind = normalize(X, integrator)
    bound = ZERO_BOUND
    for T, c, F, G in cell_terms(Xb, t):
        inc = cell_increment(kind, c, c + 1, T.grid)
        bound = bound + (F.bound @ inc.bound @ G.bound)
    return bound


def integral_apply(X: SimpleBiprocess | Biprocess, integrator: Integrator, t: float,
                   vec: np.ndarray) -> np.ndarray:
    """I^η(t) applied to a state vector, without forming the operator."""
    Xb, kind = normalize(X, integrator)
    out = np.zeros_like(vec, dtype=complex)
    for T, c, F, G in cell_terms(Xb, t):
        out += F.mat @ (cell_increment(kind, c, c + 1, T.grid).mat @ (G.mat @ vec))
    return out


def running_apply(X: SimpleBiprocess | Biprocess, integrator: Integrator, vec: np.ndarray,
                  adjoint: bool = False) -> list[np.ndarray]:
    """[I(t_0) v, I(t_1) v, ..., I(t_n) v] (or with I(t)† when ``adjoint``)."""
    Xb, kind = normalize(X, integrator)
    grid = Xb.terms[0].grid
    per_cell = [np.zeros_like(vec, dtype=complex) for _ in range(grid.n_cells)]
    for T, c, F, G in cell_terms(Xb):
        inc = cell_increment(kind, c, c + 1, grid).mat
        if adjoint:
            per_cell[c] += G.mat.conj().T @ (inc.conj().T @ (F.mat.conj().T @ vec))
        else:
            per_cell[c] += F.mat @ (inc @ (G.mat @ vec))
    out = [np.zeros_like(vec, dtype=complex)]
    for c in range(grid.n_cells):
        out.append(out[-1] + per_cell[c])
    return out


def running_bounds(X: SimpleBiprocess | Biprocess, integrator: Integrator) -> list[OpBound]:
    """Growth metadata of I(t_0), ..., I(t_n)."""
    Xb, kind = normalize(X, integrator)
    grid = Xb.terms[0].grid
    per_cell = [ZERO_BOUND] * grid.n_cells
    for T, c, F, G in cell_terms(Xb):
        inc = cell_increment(kind, c, c + 1, grid)
        per_cell[c] = per_cell[c] + (F.bound @ inc.bound @ G.bound)
    out = [ZERO_BOUND]
    for c in range(grid.n_cells):
        out.append(out[-1] + per_cell[c])
    return out


# --------------------------------------------------------------------------
# Fast matrix elements
# --------------------------------------------------------------------------


def _require_exp(*states):
    for s in states:
        if not isinstance(s, ExpState):
            raise FockError("matrix-element formulas need exponential states w ε(u)")


def matrix_element_fast(x: ExpState, X: SimpleBiprocess | Biprocess, integrator: Integrator,
                        t: float, y: ExpState) -> complex:
    """∫_0^t ⟨x, F(s)G(s) y⟩ dµ^η_{D,E}(s) summed over cells."""
    return _fast(x, X, integrator, t, y)[0]


def _fast(x: ExpState, X, integrator, t, y) -> tuple[complex, float, bool]:
    """(value, tail bound, whether truncation can separate fast and oracle)."""
    _require_exp(x, y)
    Xb, kind = normalize(X, integrator)
    masses = mu(kind, x.u, y.u).masses
    total, tau = 0.0j, 0.0
    exact = True
    for T in Xb.terms:
        m = multiplier(kind, T.D, T.E)
        if m == 0:
            continue
        for a, b, F, G in T.pieces(t):
            w = complex(masses[a:b].sum())
            if w == 0:
                continue
            B = F @ G
            total += w * complex(np.vdot(x.vec, B.mat @ y.vec))
            tau += abs(w) * B.bound.tail_between(x, y)
            # a time increment between degree-preserving values truncates
            # identically on both sides
            exact = exact and kind.sort == "time" and F.reach == 0 and G.reach == 0
    return total, tau, exact


@dataclass(frozen=True)
class OracleComparison:
    fast: complex
    oracle: complex
    diff: float
    tau_trunc: float
    roundoff: float

    @property
    def tau(self) -> float:
        return self.tau_trunc + self.roundoff

    @property
    def ok(self) -> bool:
        return self.diff <= self.tau


ROUNDOFF = 1e-12


def compare_with_oracle(x: ExpState, X: SimpleBiprocess | Biprocess, integrator: Integrator,
                        t: float, y: ExpState) -> OracleComparison:
    """Fast formula vs defining sum, with τ = truncation tail + roundoff allowance.

    The tail is zero when truncation cannot separate the two evaluations:
    every multiplier vanishes (both sides are exactly 0) or the integrator is
    time with degree-preserving values.
    """
    fast, tau_fast, exact = _fast(x, X, integrator, t, y)
    oracle = complex(np.vdot(x.vec, integral_apply(X, integrator, t, y.vec)))
    tau = 0.0 if exact else tau_fast + integral_bound(X, integrator, t).tail_between(x, y)
    scale = max(1.0, abs(fast), abs(oracle), x.exact_norm * y.exact_norm)
    return OracleComparison(fast, oracle, abs(fast - oracle), tau, ROUNDOFF * scale)


# --------------------------------------------------------------------------
# Products of two increments
# --------------------------------------------------------------------------

_NONTRIVIAL = {("cre", "cre"), ("num", "cre"), ("cre", "num"), ("num", "num")}


def ito_pair_density(k1: ProcessKind, k2: ProcessKind, D1: Filter, E1: Filter, D2: Filter,
                     E2: Filter, u: OneParticleVector, v: OneParticleVector) -> MeasureDensity | None:
    """µ_{1,2} for ⟨P1 dA^{η1} Q1 x, P2 dA^{η2} Q2 y⟩; None when structurally zero."""
    if (k1.sort, k2.sort) not in _NONTRIVIAL or k1.k != k2.k:
        return None
    k = k1.k
    if (k1.sort, k2.sort) == ("cre", "cre"):
        return MeasureDensity.lebesgue(u.grid).scale(int(k in D1 and k in D2))
    if (k1.sort, k2.sort) == ("num", "cre"):
        return mu(k2, u, v).scale(int(k in E1 and k in D1 and k in D2))
    if (k1.sort, k2.sort) == ("cre", "num"):
        return mu(k1.dual, u, v).scale(int(k in D1 and k in D2 and k in E2))
    return mu(k1, u, v).scale(int(all(k in F for F in (E1, D1, D2, E2))))


def left_increment_measure(kind: ProcessKind, D1, E1, D2, E2, u, v) -> MeasureDensity:
    """Measure multiplying ⟨B1 x, I2 y⟩ when I1 carries the increment."""
    if kind.sort == "time":
        return MeasureDensity.lebesgue(u.grid)
    k = kind.k
    if kind.sort == "ann":
        return mu(kind.dual, u, v).scale(int(k in E1))
    if kind.sort == "cre":
        return mu(kind.dual, u, v).scale(int(k in D1 and k in D2 and k in E2))
    return mu(kind, u, v).scale(int(all(k in F for F in (E1, D1, D2, E2))))


def right_increment_measure(kind: ProcessKind, D1, E1, D2, E2, u, v) -> MeasureDensity:
    """Measure multiplying ⟨I1 x, B2 y⟩ when I2 carries the increment."""
    if kind.sort == "time":
        return MeasureDensity.lebesgue(u.grid)
    k = kind.k
    if kind.sort == "ann":
        return mu(kind, u, v).scale(int(k in E2))
    if kind.sort == "cre":
        return mu(kind, u, v).scale(int(k in E1 and k in D1 and k in D2))
    return mu(kind, u, v).scale(int(all(k in F for F in (E1, D1, D2, E2))))


@dataclass(frozen=True)
class DeltaPair:
    full: complex
    cross: complex
    ito_oracle: complex
    ito_analytic: complex
    mass: complex
    tau: float

    @property
    def diff(self) -> float:
        return abs(self.ito_oracle - self.ito_analytic)

    @property
    def ok(self) -> bool:
        return self.diff <= self.tau


@lru_cache(maxsize=256)
def _projection_mask(V: Filter, grid: GridSpec) -> np.ndarray:
    """0/1 diagonal of P_V, so projecting is an exact elementwise product."""
    return color_projection(V, grid).mat.diagonal().real.copy()


def delta_pair(k1: ProcessKind, k2: ProcessKind, filters: tuple[Filter, Filter, Filter, Filter],
               x: ExpState, y: ExpState, s: float, t: float,
               ref: tuple[float, float]) -> DeltaPair:
    """Δ_{1,2} = ⟨P1 ΔA^{η1} Q1 x, P2 ΔA^{η2} Q2 y⟩ over [s,t] and its Itô part.

    The product part is isolated by placing the second increment on the
    disjoint reference window ``ref`` (same length, same values of u and v),
    where no Itô term arises.  The analytic Itô part is
    µ_{1,2}([s,t]) ⟨P1 Q1 x, P2 Q2 y⟩.
    """
    _require_exp(x, y)
    D1, E1, D2, E2 = filters
    g = x.grid
    a0, a1 = g.cell_of(s), g.cell_of(t)
    b0, b1 = g.cell_of(ref[0]), g.cell_of(ref[1])
    if a1 - a0 != b1 - b0 or max(a0, b0) < min(a1, b1):
        raise FockError("reference window must be disjoint and of equal length")
    for w in (x.u, y.u):
        if not np.array_equal(w.coef[a0:a1], w.coef[b0:b1]):
            raise FockError("u and v must take equal values on both windows")
    P1, Q1, P2, Q2 = (_projection_mask(V, g) for V in (D1, E1, D2, E2))
    inc1 = cell_increment(k1, a0, a1, g)
    inc2 = cell_increment(k2, a0, a1, g)
    inc2r = cell_increment(k2, b0, b1, g)
    xq, yq = Q1 * x.vec, Q2 * y.vec
    lx = P1 * (inc1.mat @ xq)
    full = complex(np.vdot(lx, P2 * (inc2.mat @ yq)))
    cross = complex(np.vdot(lx, P2 * (inc2r.mat @ yq)))
    dens = ito_pair_density(k1, k2, D1, E1, D2, E2, x.u, y.u)
    mass = 0j if dens is None else dens.mass(s, t)
    overlap = complex(np.vdot(P1 * xq, P2 * yq))
    # color projections are degree-preserving contractions: composing their
    # bounds returns the same growth, so only the increments enter
    left = inc1.bound.H
    tau = ((left @ inc2.bound).tail_between(x, y) + (left @ inc2r.bound).tail_between(x, y)
           + abs(mass) * color_projection(D1, g).bound.tail_between(x, y))
    return DeltaPair(full, cross, full - cross, mass * overlap, mass, tau)


# --------------------------------------------------------------------------
# three-term decomposition of ⟨I1 x, I2 y⟩
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ItoInner:
    lhs: complex
    terms: tuple[complex, complex, complex]
    tau: float

    @property
    def rhs(self) -> complex:
        return sum(self.terms)

    @property
    def diff(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def ok(self) -> bool:
        return self.diff <= self.tau


def _cell_values(X: SimpleBiprocess, c: int) -> SparseOperator:
    F, G = X.value_at_cell(c)
    return F @ G


def ito_inner(x: ExpState, X1: SimpleBiprocess, k1: ProcessKind, X2: SimpleBiprocess,
              k2: ProcessKind, t: float, y: ExpState) -> ItoInner:
    """⟨I1 x, I2 y⟩ = ∫⟨B1x, I2y⟩dµ1 + ∫⟨I1x, B2y⟩dµ2 + ∫⟨B1x, B2y⟩dµ12.

    Inside one cell, s ↦ ⟨B1 x, I2(s) y⟩ is affine, so its integral against
    a constant density is the cell mass times the endpoint average.
    """
    _require_exp(x, y)
    g = x.grid
    jt = g.cell_of(t)
    D1, E1, D2, E2 = X1.D, X1.E, X2.D, X2.E
    u, v = x.u, y.u
    I1x = running_apply(X1, k1, x.vec)
    I2y = running_apply(X2, k2, y.vec)
    b1 = running_bounds(X1, k1)
    b2 = running_bounds(X2, k2)
    m1 = left_increment_measure(k1, D1, E1, D2, E2, u, v).masses
    m2 = right_increment_measure(k2, D1, E1, D2, E2, u, v).masses
    d12 = ito_pair_density(k1, k2, D1, E1, D2, E2, u, v)
    m12 = np.zeros(g.n_cells) if d12 is None else d12.masses
    s1 = s2 = s3 = 0j
    tau = (b1[jt].H @ b2[jt]).tail_between(x, y)
    for c in range(jt):
        B1, B2 = _cell_values(X1, c), _cell_values(X2, c)
        B1x, B2y = B1.mat @ x.vec, B2.mat @ y.vec
        if m1[c] != 0:
            s1 += m1[c] * 0.5 * (np.vdot(B1x, I2y[c]) + np.vdot(B1x, I2y[c + 1]))
            tau += abs(m1[c]) * 0.5 * ((B1.bound.H @ b2[c]).tail_between(x, y)
                                       + (B1.bound.H @ b2[c + 1]).tail_between(x, y))
        if m2[c] != 0:
            s2 += m2[c] * 0.5 * (np.vdot(I1x[c], B2y) + np.vdot(I1x[c + 1], B2y))
            tau += abs(m2[c]) * 0.5 * ((b1[c].H @ B2.bound).tail_between(x, y)
                                       + (b1[c + 1].H @ B2.bound).tail_between(x, y))
        if m12[c] != 0:
            s3 += m12[c] * np.vdot(B1x, B2y)
            tau += abs(m12[c]) * (B1.bound.H @ B2.bound).tail_between(x, y)
    lhs = complex(np.vdot(I1x[jt], I2y[jt]))
    return ItoInner(lhs, (complex(s1), complex(s2), complex(s3)), tau)


# --------------------------------------------------------------------------
# Norm estimates
# --------------------------------------------------------------------------


def sigma_nu(kind: ProcessKind, D: Filter, E: Filter,
             u: OneParticleVector) -> tuple[MeasureDensity, MeasureDensity]:
    """(σ^η_{D,E}, ν^η_{D,E}) for x = w ε(u)."""
    g = u.grid
    zero_m = MeasureDensity.zero(g)
    if kind.sort == "time":
        return MeasureDensity.lebesgue(g), zero_m
    k = kind.k
    if kind.sort == "ann":
        return mu(kind, u, u).scale(int(k in E)), zero_m
    if kind.sort == "cre":
        return (mu(kind, u, u).scale(int(k in D and k in E)),
                MeasureDensity.lebesgue(g).scale(int(k in D)))
    both = int(k in D and k in E)
    m = mu(kind, u, u).scale(both)
    return m, m


def xi(kind: ProcessKind, D: Filter, E: Filter, u: OneParticleVector) -> MeasureDensity:
    s, n = sigma_nu(kind, D, E, u)
    return s.variation() + n


@dataclass(frozen=True)
class NormEstimate:
    actual: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.actual <= self.bound * (1 + 1e-9) + 1e-300


def _cell_norms(X: SimpleBiprocess, x: ExpState, jt: int) -> np.ndarray:
    out = np.zeros(x.grid.n_cells)
    for a, b, F, G in X.pieces(x.grid.time(jt)):
        out[a:b] = np.linalg.norm(F.mat @ (G.mat @ x.vec)) ** 2
    return out


def norm_estimate(X: SimpleBiprocess, kind: ProcessKind, t: float, x: ExpState) -> NormEstimate:
    """‖I^η(t)x‖² against e^{|σ|([0,t])} ∫‖B(s)x‖² ξ(ds)."""
    _require_exp(x)
    jt = x.grid.cell_of(t)
    actual = float(np.linalg.norm(integral_apply(X, kind, t, x.vec)) ** 2)
    s, _ = sigma_nu(kind, X.D, X.E, x.u)
    C = math.exp(float(s.variation().masses[:jt].real.sum()))
    w = xi(kind, X.D, X.E, x.u).masses.real
    bound = C * float((_cell_norms(X, x, jt)[:jt] * w[:jt]).sum())
    return NormEstimate(actual, bound)


def seminorm(X: SimpleBiprocess, x: ExpState, t: float, kind: ProcessKind) -> float:
    """‖X‖_{x,t,η} = (∫‖B(s)x‖² ξ^η_{FULL,FULL}(ds))^{1/2}."""
    jt = x.grid.cell_of(t)
    full = Filter(None)
    w = xi(kind, full, full, x.u).masses.real
    return math.sqrt(float((_cell_norms(X, x, jt)[:jt] * w[:jt]).sum()))


# --------------------------------------------------------------------------
# Sums over integrators
# --------------------------------------------------------------------------


def kinds_up_to(n: int, u: OneParticleVector | None = None) -> list[ProcessKind]:
    """𝒯(n) or, with u, 𝒯(n, u) (annihilation and number only up to N(u))."""
    out = [ProcessKind("time", 0)]
    nu = n if u is None else min(n, u.color_support())
    for k in range(1, n + 1):
        if k <= nu:
            out.append(ProcessKind("ann", k))
        out.append(ProcessKind("cre", k))
        if k <= nu:
            out.append(ProcessKind("num", k))
    return out


@dataclass(frozen=True)
class SumReport:
    value: np.ndarray
    partial_norms: tuple[float, ...]
    deviations: tuple[float, ...]
    norm_sq: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.norm_sq <= self.bound * (1 + 1e-9)


def sum_integrals(family: Mapping[ProcessKind, SimpleBiprocess], t: float, x: ExpState) -> SumReport:
    """Σ_η ∫ X^η # dA^η applied to x, through the partial sums over 𝒯(n)."""
    _require_exp(x)
    g = x.grid
    jt = g.cell_of(t)
    C = g.n_colors
    parts, norms, devs = [], [], []
    current = np.zeros_like(x.vec, dtype=complex)
    done: set[ProcessKind] = set()
    for n in range(1, C + 1):
        for kind in kinds_up_to(n):
            if kind in done:
                continue
            done.add(kind)
            if kind in family:
                current = current + integral_apply(family[kind], kind, t, x.vec)
        parts.append(current.copy())
        norms.append(float(np.linalg.norm(current)))
        devs.append(float(np.linalg.norm(parts[-1] - parts[-2])) if len(parts) > 1 else norms[-1])
    w = nu_u(x.u).masses.real
    tot = 0.0
    for kind in kinds_up_to(C, x.u):
        if kind in family:
            tot += float((_cell_norms(family[kind], x, jt)[:jt] * w[:jt]).sum())
    bound = 2.0 * math.exp(float(w[:jt].sum())) * tot
    return SumReport(current, tuple(norms), tuple(devs), float(np.linalg.norm(current) ** 2), bound)


__all__ = [
    "DeltaPair", "IntegralResult", "ItoInner", "MeasureDensity", "NormEstimate", "OracleComparison",
    "SumReport", "cell_terms", "compare_with_oracle", "delta_pair", "filtered_mu",
    "integral_apply", "integral_bound", "integral_defining_sum", "ito_inner", "ito_pair_density",
    "kinds_up_to", "left_increment_measure", "right_increment_measure", "matrix_element_fast", "mu", "multiplier",
    "norm_estimate", "normalize", "nu_u", "running_apply", "running_bounds", "seminorm",
    "sigma_nu", "sum_integrals", "xi",
]
