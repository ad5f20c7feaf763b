"""Filtered stochastic differential equations on probe vectors.

Coefficients are ampliations ``F̄ ⊗ P^(C)`` with ``F̄`` acting on the initial
space, so that operator norms, the assembled unitarity processes and the
conditions on them reduce to small matrices indexed by color sets.

Discretization: time integrals are evaluated exactly on piecewise-polynomial
iterates; noise integrals use the value at the left end of each cell, which
is the defining sum for adapted step integrands.  Picard iteration therefore
converges to the solution of the discretized equation, and the residual of
the integral equation is measured in that same discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .fock import (
    FULL,
    ExpState,
    Filter,
    FockError,
    GridSpec,
    OneParticleVector,
    SparseOperator,
    color_projection,
    initial_operator,
    lower_colors,
)
from .integrate import multiplier, nu_u
from .processes import TIME, Band, ProcessKind, cell_increment, signed_filters

PICARD_TOL = 1e-9
PICARD_ITERS = 40
UNITARITY_TOL = 1e-10
_TAIL = 1e-18


# --------------------------------------------------------------------------
# Sums of ampliations Σ_V Ā_V ⊗ P^(V)
# --------------------------------------------------------------------------


def _key(V: Filter):
    return V.sort_key()


class FilterSum:
    """Σ_V Ā_V ⊗ P^(V) with Ā_V matrices on the initial space."""

    __slots__ = ("h", "parts")

    def __init__(self, h: int, parts: Mapping[Filter, np.ndarray] | None = None):
        self.h = h
        clean = {}
        for V, a in (parts or {}).items():
            a = np.asarray(a, dtype=complex).reshape(h, h)
            clean[V] = clean.get(V, 0) + a
        self.parts = {V: clean[V] for V in sorted(clean, key=_key) if np.any(clean[V] != 0)}

    @classmethod
    def of(cls, a, V: Filter = FULL) -> "FilterSum":
        a = np.atleast_2d(np.asarray(a, dtype=complex))
        return cls(a.shape[0], {V: a})

    @classmethod
    def identity(cls, h: int) -> "FilterSum":
        return cls(h, {FULL: np.eye(h)})

    @classmethod
    def zero(cls, h: int) -> "FilterSum":
        return cls(h, {})

    @classmethod
    def projection(cls, h: int, p: Filter | Band) -> "FilterSum":
        """P^(V) or the band P^[k] as a signed sum of filter projections."""
        return cls(h, {}) + sum((cls(h, {W: c * np.eye(h)}) for c, W in signed_filters(p)),
                                cls(h, {}))

    def __add__(self, other: "FilterSum") -> "FilterSum":
        parts = dict(self.parts)
        for V, a in other.parts.items():
            parts[V] = parts.get(V, 0) + a
        return FilterSum(self.h, parts)

    def __sub__(self, other: "FilterSum") -> "FilterSum":
        return self + other.scale(-1.0)

    def scale(self, c: complex) -> "FilterSum":
        return FilterSum(self.h, {V: c * a for V, a in self.parts.items()})

    def __matmul__(self, other: "FilterSum") -> "FilterSum":
        parts: dict[Filter, np.ndarray] = {}
        for V, a in self.parts.items():
            for W, b in other.parts.items():
                U = V & W
                parts[U] = parts.get(U, 0) + a @ b
        return FilterSum(self.h, parts)

    @property
    def H(self) -> "FilterSum":
        return FilterSum(self.h, {V: a.conj().T for V, a in self.parts.items()})

    def sliced(self, k: int) -> "FilterSum":
        """[F]_k = Σ_{V ∋ k} F_V."""
        return FilterSum(self.h, {V: a for V, a in self.parts.items() if k in V})

    def restrict(self, V: Filter) -> "FilterSum":
        return self @ FilterSum(self.h, {V: np.eye(self.h)})

    def at_atom(self, S: Filter) -> np.ndarray:
        """The block acting on states whose set of colors is exactly S."""
        out = np.zeros((self.h, self.h), dtype=complex)
        for V, a in self.parts.items():
            if S.issubset(V):
                out += a
        return out

    def norm(self, n_colors: int) -> float:
        """Operator norm on h0 ⊗ Γ (max over color-set blocks)."""
        return max((float(np.linalg.norm(self.at_atom(S), 2)) for S in color_sets(n_colors)),
                   default=0.0)

    def materialize(self, grid: GridSpec) -> SparseOperator:
        total = None
        for V, a in self.parts.items():
            term = initial_operator(grid, a) @ color_projection(V, grid)
            total = term if total is None else total + term
        if total is None:
            return initial_operator(grid, np.zeros((self.h, self.h)))
        return total

    def filters(self) -> list[Filter]:
        return list(self.parts)

    def __repr__(self) -> str:
        return "FilterSum(" + ", ".join(f"{V}: {a.tolist()}" for V, a in self.parts.items()) + ")"


def color_sets(n_colors: int) -> list[Filter]:
    return [Filter.of(c) for r in range(n_colors + 1) for c in combinations(range(1, n_colors + 1), r)]


# --------------------------------------------------------------------------
# Systems
# --------------------------------------------------------------------------


def _as_cells(a, h: int, n_cells: int) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim == 2:
        a = np.broadcast_to(a, (n_cells, h, h))
    if a.shape != (n_cells, h, h):
        raise FockError(f"coefficient shape {a.shape} != ({n_cells}, {h}, {h})")
    return np.ascontiguousarray(a)


@dataclass(frozen=True, eq=False)
class Coefficient:
    """X^η_{C,D} = (F̄ ⊗ P^(C)) ⊗ (Ḡ ⊗ P^(D)) with F̄, Ḡ constant on cells."""

    kind: ProcessKind
    C: Filter
    D: Filter
    F: np.ndarray  # (n_cells, h, h)
    G: np.ndarray

    @classmethod
    def make(cls, grid: GridSpec, kind: ProcessKind, C: Filter, D: Filter, F, G=None) -> "Coefficient":
        h = grid.h0_dim
        G = np.eye(h) if G is None else G
        return cls(kind, C, D, _as_cells(F, h, grid.n_cells), _as_cells(G, h, grid.n_cells))

    def B(self, c: int) -> FilterSum:
        """The associated process B = F G at cell c."""
        return FilterSum(self.F.shape[1], {self.C & self.D: self.F[c] @ self.G[c]})

    def sup_norm_sq(self) -> float:
        return max(float(np.linalg.norm(f @ g, 2)) ** 2 for f, g in zip(self.F, self.G))


def closure(filters: Iterable[Filter]) -> tuple[Filter, ...]:
    """Smallest superset closed under intersections."""
    out = set(filters)
    changed = True
    while changed:
        changed = False
        for a in list(out):
            for b in list(out):
                c = a & b
                if c not in out:
                    out.add(c)
                    changed = True
    return tuple(sorted(out, key=_key))


@dataclass(frozen=True, eq=False)
class SDESystem:
    grid: GridSpec
    filters: tuple[Filter, ...]
    coefficients: tuple[Coefficient, ...]
    initial: Mapping[Filter, np.ndarray]

    def __post_init__(self):
        P0 = set(self.filters)
        if len(P0) != len(self.filters):
            raise FockError("filter collection has duplicates")
        for a in P0:
            for b in P0:
                if (a & b) not in P0:
                    raise FockError(f"filter collection not closed under intersection: {a} ∩ {b}")
        for V in P0:
            V.validate(self.grid.n_colors)
        for X in self.coefficients:
            if X.C not in P0 or X.D not in P0:
                raise FockError(f"coefficient filters ({X.C},{X.D}) not in the collection")
            if X.F.shape[0] != self.grid.n_cells:
                raise FockError("coefficient defined on a different grid")
        for V in self.initial:
            if V not in P0:
                raise FockError(f"initial value for {V} outside the collection")

    @classmethod
    def build(cls, grid: GridSpec, coefficients: Sequence[Coefficient],
              initial: Mapping[Filter, np.ndarray] | None = None,
              extra_filters: Iterable[Filter] = ()) -> "SDESystem":
        """Close the filters used by coefficients and initial values under intersection."""
        initial = {FULL: np.eye(grid.h0_dim)} if initial is None else dict(initial)
        used = {FULL, *initial, *extra_filters}
        for X in coefficients:
            used |= {X.C, X.D}
        return cls(grid, closure(used), tuple(coefficients), initial)

    def initial_value(self, V: Filter) -> FilterSum:
        h = self.grid.h0_dim
        a = self.initial.get(V)
        return FilterSum.zero(h) if a is None else FilterSum.of(a, V)

    @cached_property
    def routes(self) -> dict[Filter, list[tuple[Coefficient, Filter]]]:
        """For each V, the pairs (X_{C,D}, E) with C ∩ D ∩ E = V."""
        out = {V: [] for V in self.filters}
        for X in self.coefficients:
            for E in self.filters:
                out[X.C & X.D & E].append((X, E))
        return out

    @cached_property
    def l0(self) -> float:
        return max((float(np.linalg.norm(a, 2)) ** 2 for a in self.initial.values()), default=0.0)

    @cached_property
    def kT(self) -> float:
        """max_{C,D} Σ_η sup_t ‖B^η_{C,D}(t)‖²."""
        groups: dict[tuple, list[Coefficient]] = {}
        for X in self.coefficients:
            groups.setdefault((X.C, X.D, X.kind), []).append(X)
        per_pair: dict[tuple, float] = {}
        for (C, D, kind), Xs in groups.items():
            s = max(float(np.linalg.norm(sum(X.F[c] @ X.G[c] for X in Xs), 2)) ** 2
                    for c in range(self.grid.n_cells))
            per_pair[(C, D)] = per_pair.get((C, D), 0.0) + s
        return max(per_pair.values(), default=0.0)


class _Ops:
    """Cached sparse operators of a system."""

    def __init__(self, sys: SDESystem):
        self.sys = sys
        self.g = sys.grid
        self._amp: dict = {}
        self._noise: dict = {}
        self._time: dict = {}

    def amp(self, a: np.ndarray, V: Filter) -> SparseOperator:
        key = (a.tobytes(), V)
        op = self._amp.get(key)
        if op is None:
            op = initial_operator(self.g, a) @ color_projection(V, self.g)
            self._amp[key] = op
        return op

    def noise(self, X: Coefficient, c: int) -> SparseOperator:
        key = (id(X), c)
        op = self._noise.get(key)
        if op is None:
            op = self.amp(X.F[c], X.C) @ cell_increment(X.kind, c, c + 1, self.g) @ self.amp(X.G[c], X.D)
            self._noise[key] = op
        return op

    def time(self, X: Coefficient, c: int) -> SparseOperator:
        key = (id(X), c)
        op = self._time.get(key)
        if op is None:
            op = self.amp(X.F[c] @ X.G[c], X.C & X.D)
            self._time[key] = op
        return op


# --------------------------------------------------------------------------
# Picard iteration
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Per filter V: values at grid times, shape (n_end+1, dim, n_probes), and cell polynomials."""

    starts: dict[Filter, np.ndarray]
    polys: dict[Filter, list[list[np.ndarray]]]


def _trim(coefs: list[np.ndarray], dt: float) -> list[np.ndarray]:
    scale = max(float(np.linalg.norm(v)) for v in coefs) if coefs else 0.0
    while len(coefs) > 1 and float(np.linalg.norm(coefs[-1])) * dt ** (len(coefs) - 1) <= _TAIL * max(scale, 1e-300):
        coefs.pop()
    return coefs


def _apply(fs: FilterSum, grid: GridSpec, X: np.ndarray) -> np.ndarray:
    return fs.materialize(grid).mat @ X if fs.parts else np.zeros_like(X)


def _constant_trajectory(sys: SDESystem, start: Mapping[Filter, FilterSum], X: np.ndarray,
                         n_end: int) -> Trajectory:
    starts, polys = {}, {}
    for V in sys.filters:
        v = _apply(start.get(V, FilterSum.zero(sys.grid.h0_dim)), sys.grid, X)
        starts[V] = np.repeat(v[None], n_end + 1, axis=0)
        polys[V] = [[v] for _ in range(n_end)]
    return Trajectory(starts, polys)


def _picard_step(sys: SDESystem, prev: Trajectory, x0: dict[Filter, np.ndarray], n_end: int,
                 ops: _Ops) -> Trajectory:
    """One application of the right-hand side of the integral equation."""
    dt = sys.grid.dt
    starts, polys = {}, {}
    for V in sys.filters:
        s = np.empty_like(prev.starts[V])
        s[0] = x0[V]
        pl = []
        routes = sys.routes[V]
        for c in range(n_end):
            coefs = [s[c]]
            for X, E in routes:
                if X.kind.sort == "time":
                    B = ops.time(X, c)
                    for p, v in enumerate(prev.polys[E][c]):
                        w = (B.mat @ v) / (p + 1)
                        if p + 1 < len(coefs):
                            coefs[p + 1] = coefs[p + 1] + w
                        else:
                            coefs.append(w)
            coefs = _trim(coefs, dt)
            end = sum(v * dt**p for p, v in enumerate(coefs))
            for X, E in routes:
                if X.kind.sort != "time":
                    end = end + ops.noise(X, c).mat @ prev.starts[E][c]
            s[c + 1] = end
            pl.append(coefs)
        starts[V], polys[V] = s, pl
    return Trajectory(starts, polys)


def _slab_solve(sys: SDESystem, x0: dict[Filter, np.ndarray], n_end: int, ops: _Ops,
                max_terms: int = 200) -> Trajectory:
    """Cell-by-cell fixed point: the same solution, computed causally."""
    dt = sys.grid.dt
    starts = {V: np.empty((n_end + 1,) + x0[V].shape, dtype=complex) for V in sys.filters}
    polys = {V: [] for V in sys.filters}
    for V in sys.filters:
        starts[V][0] = x0[V]
    for c in range(n_end):
        coefs = {V: [starts[V][c]] for V in sys.filters}
        for p in range(max_terms):
            nxt, size = {}, 0.0
            for V in sys.filters:
                w = None
                for X, E in sys.routes[V]:
                    if X.kind.sort == "time":
                        t = ops.time(X, c).mat @ coefs[E][p]
                        w = t if w is None else w + t
                w = np.zeros_like(x0[V]) if w is None else w / (p + 1)
                nxt[V] = w
                size = max(size, float(np.linalg.norm(w)) * dt ** (p + 1))
            scale = max(float(np.linalg.norm(coefs[V][0])) for V in sys.filters)
            if size <= _TAIL * max(scale, 1e-300):
                break
            for V in sys.filters:
                coefs[V].append(nxt[V])
        else:
            raise FockError("cell flow series did not converge")
        for V in sys.filters:
            end = sum(v * dt**q for q, v in enumerate(coefs[V]))
            for X, E in sys.routes[V]:
                if X.kind.sort != "time":
                    end = end + ops.noise(X, c).mat @ starts[E][c]
            starts[V][c + 1] = end
            polys[V].append(coefs[V])
    return Trajectory(starts, polys)


def picard_bound(n: int, sys: SDESystem, x: ExpState, t: float, T: float) -> float:
    """2ⁿ|P₀|^{6n} e^{nν_u(T)} k_Tⁿ l₀ ‖x‖² ν_u(t)ⁿ / n!, evaluated in logs."""
    nu = nu_u(x.u)
    nut, nuT = float(nu.mass(0.0, t).real), float(nu.mass(0.0, T).real)
    kT, l0, P = sys.kT, sys.l0, len(sys.filters)
    xn = x.exact_norm ** 2
    if kT == 0 or l0 == 0 or xn == 0 or nut == 0:
        return 0.0
    log_b = (n * math.log(2) + 6 * n * math.log(P) + n * nuT + n * math.log(kT) + math.log(l0)
             + math.log(xn) + n * math.log(nut) - math.lgamma(n + 1))
    return math.exp(min(log_b, 700.0))


def _bound_table(sys: SDESystem, probes: Sequence[ExpState], n_iter: int, n_end: int,
                 T: float) -> np.ndarray:
    """picard_bound for every iterate n, grid time and probe, shape (n_iter+1, n_end+1, P)."""
    g = sys.grid
    kT, l0, P = sys.kT, sys.l0, len(sys.filters)
    out = np.zeros((n_iter + 1, n_end + 1, len(probes)))
    if kT == 0 or l0 == 0:
        return out
    dens = np.array([nu_u(x.u).masses.real for x in probes])          # (P, n_cells)
    cum = np.concatenate([np.zeros((len(probes), 1)), np.cumsum(dens, axis=1)], axis=1)
    nut = cum[:, : n_end + 1].T                                         # (n_end+1, P)
    nuT = cum[:, g.cell_of(T)]
    xn = np.array([x.exact_norm ** 2 for x in probes])
    with np.errstate(divide="ignore"):
        base = math.log(2) + 6 * math.log(P) + math.log(kT) + nuT[None, :] + np.log(nut)
        const = math.log(l0) + np.log(xn)[None, :]
        for n in range(n_iter + 1):
            log_b = n * base + const - math.lgamma(n + 1) if n else np.broadcast_to(const, base.shape)
            out[n] = np.exp(np.minimum(log_b, 700.0))
    out[:, :, xn == 0] = 0.0
    out[1:, 0, :] = 0.0
    return out


@dataclass
class PicardReport:
    n_iter: int
    converged: bool
    deviations: list[float]        # sup over probes, filters, grid times of ‖ΔI x‖²
    bound_ratio: list[float]       # sup over checks of deviation / bound (0 where the bound is 0)
    violations: int
    residual: float                # sup of |RHS(I)x − I x| at grid times
    l0: float
    kT: float
    n_filters: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass
class PicardSolution:
    system: SDESystem
    probes: list[ExpState]
    trajectory: Trajectory
    n_end: int

    def component(self, i: int, V: Filter, c: int | None = None) -> np.ndarray:
        c = self.n_end if c is None else c
        return self.trajectory.starts[V][c][:, i]

    def value(self, i: int, c: int | None = None) -> np.ndarray:
        c = self.n_end if c is None else c
        return sum(s[c][:, i] for s in self.trajectory.starts.values())

    def values(self, c: int | None = None) -> np.ndarray:
        """(dim, n_probes) array of I(t_c) x over all probes."""
        c = self.n_end if c is None else c
        return sum(s[c] for s in self.trajectory.starts.values())


def _initial_columns(sys: SDESystem, X: np.ndarray) -> dict[Filter, np.ndarray]:
    return {V: _apply(sys.initial_value(V), sys.grid, X) for V in sys.filters}


def picard_solve(sys: SDESystem, probes: Sequence[ExpState], t_end: float | None = None,
                 n_iter: int = PICARD_ITERS, tol: float = PICARD_TOL,
                 start: Mapping[Filter, FilterSum] | None = None,
                 check_bound: bool = True) -> tuple[PicardSolution, PicardReport]:
    """Picard iteration for I_V = I_V^(0) + Σ_{C∩D∩E=V} Σ_η ∫ X^η_{C,D} I_E # dA^η on probes.

    All probes are iterated together; iteration stops once the sup over
    probes of successive deviations drops below ``tol``.  ``start`` replaces
    the zeroth iterate (the constant term stays I^(0)).  Raises if a deviation
    exceeds the a priori bound.
    """
    g = sys.grid
    T = g.horizon if t_end is None else t_end
    n_end = g.cell_of(T)
    ops = _Ops(sys)
    X = np.stack([x.vec for x in probes], axis=1)
    x0 = _initial_columns(sys, X)
    zeroth = {V: sys.initial_value(V) for V in sys.filters} if start is None else start
    cur = _constant_trajectory(sys, zeroth, X, n_end)
    checking = check_bound and start is None
    if checking:
        bounds = _bound_table(sys, probes, n_iter, n_end, T)
    deviations, ratios = [0.0], [0.0]
    violations, converged, used = 0, False, 0
    for n in range(1, n_iter + 1):
        nxt = _picard_step(sys, cur, x0, n_end, ops)
        dev_sup, ratio = 0.0, 0.0
        for V in sys.filters:
            d = np.linalg.norm(nxt.starts[V] - cur.starts[V], axis=1) ** 2  # (n_end+1, P)
            dev_sup = max(dev_sup, float(d.max()))
            if checking:
                b = bounds[n]
                violations += int(np.count_nonzero(d > b * (1 + 1e-9) + 1e-28))
                pos = b > 0
                if pos.any():
                    ratio = max(ratio, float((d[pos] / b[pos]).max()))
        deviations.append(dev_sup)
        ratios.append(ratio)
        cur, used = nxt, n
        if math.sqrt(dev_sup) < tol:
            converged = True
            break
    again = _picard_step(sys, cur, {V: cur.starts[V][0] for V in sys.filters}, n_end, ops)
    residual = max(float(np.abs(again.starts[V] - cur.starts[V]).max()) for V in sys.filters)
    if violations:
        raise FockError(f"Picard deviation exceeded the a priori bound {violations} times")
    report = PicardReport(used, converged, deviations, ratios, violations, residual,
                          sys.l0, sys.kT, len(sys.filters))
    return PicardSolution(sys, list(probes), cur, n_end), report


def solve_causal(sys: SDESystem, probes: Sequence[ExpState], t_end: float | None = None) -> PicardSolution:
    """The Picard fixed point computed cell by cell (no global iterates kept)."""
    g = sys.grid
    n_end = g.cell_of(g.horizon if t_end is None else t_end)
    X = np.stack([x.vec for x in probes], axis=1)
    traj = _slab_solve(sys, _initial_columns(sys, X), n_end, _Ops(sys))
    return PicardSolution(sys, list(probes), traj, n_end)


def gronwall_bound(c: float, a: float, t: float) -> float:
    """φ(t) ≤ a e^{ct} whenever φ(t) ≤ a + c∫₀ᵗ φ."""
    return a * math.exp(c * t)


def random_system(grid: GridSpec, rng: np.random.Generator, max_filters: int = 4,
                  n_terms: int = 4, scale: float = 0.5) -> SDESystem:
    """Random filtered system with |P₀| ≤ max_filters and ampliation coefficients."""
    from .biprocess import random_h0

    C, h = grid.n_colors, grid.h0_dim
    while True:
        picks = {FULL}
        for _ in range(int(rng.integers(1, 3))):
            picks.add(Filter.of(k for k in range(1, C + 1) if rng.random() < 0.5))
        P0 = closure(picks)
        if len(P0) <= max_filters:
            break
    kinds = [TIME] + [ProcessKind(s, k) for s in ("ann", "cre", "num") for k in range(1, C + 1)]
    terms = []
    for _ in range(n_terms):
        kind = kinds[int(rng.integers(len(kinds)))]
        Cf, Df = P0[int(rng.integers(len(P0)))], P0[int(rng.integers(len(P0)))]
        terms.append(Coefficient.make(grid, kind, Cf, Df, random_h0(grid, rng, scale), random_h0(grid, rng, 1.0)))
    initial = {FULL: np.eye(h)}
    V = P0[int(rng.integers(len(P0)))]
    if not V.is_full:
        initial[V] = random_h0(grid, rng, 0.5)
    return SDESystem(grid, P0, tuple(terms), initial)


# --------------------------------------------------------------------------
# Probes
# --------------------------------------------------------------------------


def probe_catalog(grid: GridSpec, seed: int = 0, n_fixed: int = 16, n_random: int = 16,
                  max_norm: float = 0.5, coarse_cells: int | None = None) -> list[ExpState]:
    """Fixed and seeded-random exponential states w ε(u) with ‖u‖ ≤ max_norm.

    ``u`` is drawn as a step function on ``coarse_cells`` equal cells and then
    refined, so grids that refine a common coarse grid get identical probes.
    """
    h, n, C = grid.h0_dim, grid.n_cells, grid.n_colors
    n0 = n if coarse_cells is None else coarse_cells
    if n % n0:
        raise FockError(f"{n} cells do not refine {n0} coarse cells")

    def refine(coef0: np.ndarray) -> OneParticleVector:
        return OneParticleVector(grid, np.repeat(coef0, n // n0, axis=0))

    out = []
    for i in range(n_fixed):
        w = np.zeros(h, dtype=complex)
        w[i % h] = 1.0
        if i % 3 == 2 and h > 1:
            w[(i + 1) % h] = 1j
        coef = np.zeros((n0, C), dtype=complex)
        k = i % C
        pattern = i // 2 % 4
        if pattern == 1:
            coef[:, k] = 1.0
        elif pattern == 2:
            coef[: max(1, n0 // 2), k] = 1.0
            coef[n0 // 2:, (k + 1) % C] = 1j
        elif pattern == 3:
            coef[:, :] = np.exp(1j * (np.arange(n0)[:, None] + np.arange(C)[None, :]))
        u = refine(coef)
        nu = u.norm()
        if nu > 0:
            u = u * (max_norm * (0.4 + 0.6 * ((i % 5) / 4)) / nu)
        out.append(ExpState(w, u))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        w = rng.normal(size=h) + 1j * rng.normal(size=h)
        u = refine(rng.normal(size=(n0, C)) + 1j * rng.normal(size=(n0, C)))
        u = u * (max_norm * rng.uniform(0.0, 1.0) / u.norm())
        out.append(ExpState(w / np.linalg.norm(w), u))
    return out


# --------------------------------------------------------------------------
# Independence of adaptedness types
# --------------------------------------------------------------------------


def independence_condition(order: Sequence[Filter]) -> bool:
    """V_i ∖ (V_1 ∪ … ∪ V_{i−1}) ≠ ∅ for i ≥ 2 (FULL counts as containing every color)."""
    seen: set[int] | None = set()
    for i, V in enumerate(order):
        if i > 0:
            if seen is None:
                return False
            if not V.is_full and set(V.colors) <= seen:
                return False
        if V.is_full:
            seen = None
        elif seen is not None:
            seen |= set(V.colors)
    return True


@dataclass
class IndependenceReport:
    applicable: bool
    all_vanish: bool
    witness: Filter | None = None
    witness_norm: float = 0.0
    probes_used: int = 0

    def __bool__(self) -> bool:
        return self.applicable and self.all_vanish


def _future_u(grid: GridSpec, t: float, colors: Sequence[int], rng, scale: float) -> np.ndarray:
    j = grid.cell_of(t)
    coef = np.zeros((grid.n_cells, grid.n_colors), dtype=complex)
    for k in colors:
        coef[j:, k - 1] = rng.normal(size=grid.n_cells - j) + 1j * rng.normal(size=grid.n_cells - j)
    nrm = np.sqrt(grid.dt * (np.abs(coef) ** 2).sum())
    return coef * (scale / nrm) if nrm > 0 else coef


def independence_test(components: Mapping[Filter, SparseOperator], order: Sequence[Filter],
                      t: float, grid: GridSpec, seed: int = 0, n_probes: int = 6,
                      atol: float = 1e-12) -> IndependenceReport:
    """Peel components off in reverse order with probes whose future carries only new colors.

    For W = V_i and probes x = w ε(u_past + u_future) with u_future supported on
    W ∖ (V_1 ∪ … ∪ V_{i−1}), Σ Y_V x − Σ Y_V x₀ = Ỹ_W(w ε(u_past)) ⊗ (ε(u_future) − Ω),
    where x₀ drops the future part.  A nonzero difference is a witness for W.
    """
    if not independence_condition(order):
        return IndependenceReport(False, False)
    j = grid.cell_of(t)
    if j >= grid.n_cells:
        raise FockError("independence probes need at least one future cell")
    rng = np.random.default_rng(seed)
    remaining = list(order)
    used = 0
    while remaining:
        W = remaining[-1]
        earlier: set[int] = set()
        for V in remaining[:-1]:
            earlier |= set(range(1, grid.n_colors + 1)) if V.is_full else set(V.colors)
        pool = range(1, grid.n_colors + 1) if W.is_full else W.colors
        new = [k for k in pool if k not in earlier]
        total = None
        for V in remaining:
            total = components[V] if total is None else total + components[V]
        for p in range(n_probes):
            w = rng.normal(size=grid.h0_dim) + 1j * rng.normal(size=grid.h0_dim)
            past = np.zeros((grid.n_cells, grid.n_colors), dtype=complex)
            past[:j] = rng.normal(size=(j, grid.n_colors)) + 1j * rng.normal(size=(j, grid.n_colors))
            if j:
                past *= 0.5 / np.sqrt(grid.dt * (np.abs(past) ** 2).sum())
            fut = _future_u(grid, t, new, rng, 0.5) if new else np.zeros_like(past)
            x = ExpState(w, OneParticleVector(grid, past + fut)).vec
            x0 = ExpState(w, OneParticleVector(grid, past)).vec
            d = total.mat @ x - total.mat @ x0
            if not new:
                d = total.mat @ x0
            used += 1
            nrm = float(np.linalg.norm(d))
            if nrm > atol:
                return IndependenceReport(True, False, W, nrm, used)
        remaining.pop()
    # components outside the product form can cancel under peeling; check them directly
    for V in reversed(list(order)):
        for p in range(n_probes):
            w = rng.normal(size=grid.h0_dim) + 1j * rng.normal(size=grid.h0_dim)
            coef = rng.normal(size=(grid.n_cells, grid.n_colors)) + 1j * rng.normal(size=(grid.n_cells, grid.n_colors))
            coef *= 0.5 / np.sqrt(grid.dt * (np.abs(coef) ** 2).sum())
            used += 1
            nrm = float(np.linalg.norm(components[V].mat @ ExpState(w, OneParticleVector(grid, coef)).vec))
            if nrm > atol:
                return IndependenceReport(True, False, V, nrm, used)
    return IndependenceReport(True, True, None, 0.0, used)


def random_chain(n_colors: int, rng: np.random.Generator, max_len: int = 3) -> list[Filter]:
    """A random ordered filter list satisfying the new-color condition."""
    colors = list(range(1, n_colors + 1))
    length = int(rng.integers(2, max_len + 1))
    out: list[Filter] = []
    seen: set[int] = set()
    for i in range(length):
        fresh = [k for k in colors if k not in seen]
        if not fresh:
            break
        if i == length - 1 and i > 0 and rng.random() < 0.3:
            out.append(FULL)
            break
        new = set(rng.choice(fresh, size=int(rng.integers(1, len(fresh) + 1)), replace=False).tolist())
        old = {k for k in seen if rng.random() < 0.5}
        V = Filter.of(new | old)
        out.append(V)
        seen |= set(V.colors)
    if len(out) < 2:
        out.append(FULL)
    return out


def adversarial_components(grid: GridSpec, t: float, rng: np.random.Generator):
    """Components Y_V = Ȳ_V ⊗ (past operator) ⊗ P^(V) on the future, at least one nonzero.

    Modes: a single planted component, a cancelling pair Y_{V_i} = −Y_{V_j}
    (so the sum can vanish), or every component random.
    Returns (components, order, planted filters).
    """
    from .biprocess import ampliation, random_h0, random_past_operator

    order = random_chain(grid.n_colors, rng)
    zero_op = initial_operator(grid, np.zeros((grid.h0_dim, grid.h0_dim)))
    comps = {V: zero_op for V in order}

    def value(V):
        return ampliation(grid, t, random_h0(grid, rng), random_past_operator(grid, t, rng), V)

    mode = int(rng.integers(3))
    if mode == 0:
        V = order[int(rng.integers(len(order)))]
        comps[V] = value(V)
        planted = [V]
    elif mode == 1:
        i, j = sorted(rng.choice(len(order), size=2, replace=False).tolist())
        Y = value(order[i])
        comps[order[i]], comps[order[j]] = Y, Y.scale(-1.0)
        planted = [order[i], order[j]]
    else:
        for V in order:
            comps[V] = value(V)
        planted = list(order)
    return comps, order, planted


# --------------------------------------------------------------------------
# m-free systems
# --------------------------------------------------------------------------


M_SORTS = ("ann", "cre", "num", "time")


@dataclass(frozen=True, eq=False)
class MFreeCoefficients:
    """F_σ ⊗ G_σ for σ = annihilation, creation, number, time (time-independent)."""

    F: Mapping[str, FilterSum]
    G: Mapping[str, FilterSum]

    def get(self, sort: str) -> tuple[FilterSum, FilterSum] | None:
        if sort not in self.F:
            return None
        return self.F[sort], self.G[sort]

    @property
    def h(self) -> int:
        return next(iter(self.F.values())).h

    def color_support(self) -> int:
        """Largest finite color in any filter (FULL counts as unbounded)."""
        top = 0
        for fs in list(self.F.values()) + list(self.G.values()):
            for V in fs.parts:
                if V.is_full:
                    return 10**9
                top = max(top, max(V.colors, default=0))
        return top


def mfree_filters(m: int) -> tuple[Filter, ...]:
    """𝒫₀^(m) = {V(k) = {1..k−1} : 1 ≤ k ≤ m+1} ∪ {FULL}."""
    return tuple([lower_colors(k) for k in range(1, m + 2)] + [FULL])


@dataclass
class MFreeExpansion:
    system: SDESystem
    eta_terms: int
    filtered_terms: int


def _split_terms(kind: ProcessKind, F: FilterSum, G: FilterSum, grid: GridSpec) -> list[Coefficient]:
    out = []
    for C, a in F.parts.items():
        for D, b in G.parts.items():
            out.append(Coefficient.make(grid, kind, C, D, a, b))
    return out


def mfree_sde_expand(coeffs: MFreeCoefficients, m: int, grid: GridSpec,
                     initial: Mapping[Filter, np.ndarray] | None = None) -> MFreeExpansion:
    """Rewrite dI = Σ F_σ ⊗ G_σ I # dl^{(m)σ} as a filtered system.

    Creation puts P^[k−1] on the G side; annihilation (P^[k−1]), number
    (P^[k]) and time (P^(m) = P^({1..m−1})) go on the F side.
    """
    if m > grid.n_colors:
        raise FockError(f"m = {m} exceeds the {grid.n_colors} available colors")
    h = grid.h0_dim
    terms: list[Coefficient] = []
    eta = 0
    for sort in M_SORTS:
        pair = coeffs.get(sort)
        if pair is None:
            continue
        F, G = pair
        if sort == "time":
            eta += 1
            terms += _split_terms(TIME, F @ FilterSum.projection(h, lower_colors(m)), G, grid)
            continue
        for k in range(1, m + 1):
            eta += 1
            kind = ProcessKind(sort, k)
            if sort == "cre":
                terms += _split_terms(kind, F, FilterSum.projection(h, Band(k - 1)) @ G, grid)
            elif sort == "ann":
                terms += _split_terms(kind, F @ FilterSum.projection(h, Band(k - 1)), G, grid)
            else:
                terms += _split_terms(kind, F @ FilterSum.projection(h, Band(k)), G, grid)
    sys = SDESystem.build(grid, terms, initial, extra_filters=mfree_filters(m))
    return MFreeExpansion(sys, eta, len(terms))


@dataclass
class StabilizationReport:
    m_values: list[int]
    diffs: list[float]        # sup over probes of ‖I_(m) x − I_(m−1) x‖, first entry 0
    m_star: int | None
    tol: float

    @property
    def stabilized(self) -> bool:
        return self.m_star is not None


def stabilization_sweep(coeffs: MFreeCoefficients, grid: GridSpec, m_list: Sequence[int],
                        probes: Sequence[ExpState], tol: float = 1e-12) -> StabilizationReport:
    """Solve the m-free system for each m and find the level after which solutions agree."""
    sols = []
    for m in m_list:
        sys = mfree_sde_expand(coeffs, m, grid).system
        sol = solve_causal(sys, probes)
        sols.append(sol.values())
    diffs = [0.0] + [float(np.abs(b - a).max()) for a, b in zip(sols, sols[1:])]
    m_star = None
    for i in range(len(m_list)):
        if all(d <= tol for d in diffs[i + 1:]):
            m_star = m_list[i]
            break
    if m_star == m_list[-1] and len(m_list) > 1 and diffs[-1] > tol:
        m_star = None
    return StabilizationReport(list(m_list), diffs, m_star, tol)


# --------------------------------------------------------------------------
# Unitarity
# --------------------------------------------------------------------------


def admissible_check(P0: Sequence[Filter]) -> bool:
    """Strictly increasing chain ending in FULL."""
    if not P0 or not P0[-1].is_full:
        return False
    for a, b in zip(P0, P0[1:]):
        if a == b or not a.issubset(b):
            return False
    return True


@dataclass(frozen=True, eq=False)
class UnitarityCoefficients:
    """Assembled B^η(c) = Σ_{(D,E)} 1^η_{D,E} B^η_{D,E}(c) of a system."""

    system: SDESystem

    def B(self, kind: ProcessKind, c: int) -> FilterSum:
        h = self.system.grid.h0_dim
        out = FilterSum.zero(h)
        for X in self.system.coefficients:
            if X.kind == kind and multiplier(kind, X.C, X.D):
                out = out + X.B(c)
        return out

    @staticmethod
    def slice(F: FilterSum, k: int) -> FilterSum:
        return F.sliced(k)


@dataclass
class ConditionRow:
    name: str
    t: float
    residual: float

    @property
    def ok(self) -> bool:
        return self.residual <= UNITARITY_TOL


@dataclass
class UnitarityReport:
    rows: list[ConditionRow]

    def worst(self, name: str) -> float:
        return max((r.residual for r in self.rows if r.name.startswith(name)), default=0.0)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def failing(self) -> list[str]:
        return sorted({r.name for r in self.rows if not r.ok})


def unitarity_conditions(B0: FilterSum, Bk: Mapping[int, tuple[FilterSum, FilterSum, FilterSum]],
                         n_colors: int) -> dict[str, float]:
    """Residuals of (i)–(iii); Bk[k] = (B^(k), B^(k)*, B^(k)∘)."""
    h = B0.h
    one = FilterSum.identity(h)
    out = {}
    iii = B0 + B0.H
    for k, (Ba, Bc, Bn) in sorted(Bk.items()):
        S = Bn + one
        out[f"(i) k={k}"] = max((S.H @ S - one).norm(n_colors), (S @ S.H - one).norm(n_colors))
        out[f"(ii) k={k}"] = (Bc.H + Ba + Bc.H @ Bn).norm(n_colors)
        iii = iii + Bc.H @ Bc
    out["(iii)"] = iii.norm(n_colors)
    return out


def unitarity_check(coeffs: UnitarityCoefficients, cells: Iterable[int] | None = None) -> UnitarityReport:
    sys = coeffs.system
    g = sys.grid
    rows = []
    for c in (range(g.n_cells) if cells is None else cells):
        Bk = {k: (coeffs.B(ProcessKind("ann", k), c), coeffs.B(ProcessKind("cre", k), c),
                  coeffs.B(ProcessKind("num", k), c)) for k in range(1, g.n_colors + 1)}
        for name, r in unitarity_conditions(coeffs.B(TIME, c), Bk, g.n_colors).items():
            rows.append(ConditionRow(name, g.time(c), r))
    return UnitarityReport(rows)


def m_truncated_conditions(coeffs: MFreeCoefficients, m: int, n_colors: int,
                           displayed: bool = False) -> dict[str, float]:
    """Residuals of the two m-truncated conditions (F3 = G3 = 0, F2 = G1 = 1).

    The derived first condition carries G2* P^(m) G2; ``displayed=True`` uses G2* G2.
    """
    h = coeffs.h
    Pm = FilterSum.projection(h, lower_colors(m))
    F1, _ = coeffs.get("ann")
    _, G2 = coeffs.get("cre")
    F4, G4 = coeffs.get("time")
    quad = G2.H @ G2 if displayed else G2.H @ Pm @ G2
    first = F4 @ Pm @ G4 + G4.H @ Pm @ F4.H + quad
    second = F1 @ Pm + G2.H @ Pm
    return {"quadratic": first.norm(n_colors), "linear": second.norm(n_colors)}


def free_conditions(coeffs: MFreeCoefficients, n_colors: int) -> dict[str, float]:
    F1, _ = coeffs.get("ann")
    _, G2 = coeffs.get("cre")
    F4, G4 = coeffs.get("time")
    return {"quadratic": (F4 @ G4 + G4.H @ F4.H + G2.H @ G2).norm(n_colors),
            "linear": (F1 + G2.H).norm(n_colors)}


# --------------------------------------------------------------------------
# Evolution and isometry defects
# --------------------------------------------------------------------------


def _summed_ops(sys: SDESystem, ops: _Ops, c: int):
    K = None
    N = None
    for X in sys.coefficients:
        if X.kind.sort == "time":
            op = ops.time(X, c)
            K = op if K is None else K + op
        else:
            op = ops.noise(X, c)
            N = op if N is None else N + op
    return K, N


def _flow(K: SparseOperator | None, v: np.ndarray, dt: float, adjoint: bool = False) -> np.ndarray:
    """exp(KΔ) v by its Taylor series."""
    if K is None:
        return v.copy()
    M = K.mat.conj().T if adjoint else K.mat
    out, term = v.copy(), v.copy()
    for p in range(1, 200):
        term = (M @ term) * (dt / p)
        out += term
        if np.linalg.norm(term) <= _TAIL * max(np.linalg.norm(out), 1e-300):
            return out
    raise FockError("flow series did not converge")


def step_product(sys: SDESystem, vec: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """U(T)v (or U(T)*v) as the product of cell maps exp(KΔ) + N_c."""
    g = sys.grid
    ops = _Ops(sys)
    cells = range(g.n_cells - 1, -1, -1) if adjoint else range(g.n_cells)
    v = vec
    for c in cells:
        K, N = _summed_ops(sys, ops, c)
        nv = _flow(K, v, g.dt, adjoint)
        if N is not None:
            nv = nv + ((N.mat.conj().T @ v) if adjoint else (N.mat @ v))
        v = nv
    return v


@dataclass
class DefectRow:
    n_cells: int
    isometry: float
    coisometry: float
    picard_vs_product: float


@dataclass
class DefectReport:
    rows: list[DefectRow]

    @property
    def orders(self) -> list[float]:
        out = []
        for a, b in zip(self.rows, self.rows[1:]):
            if a.isometry > 0 and b.isometry > 0:
                out.append(math.log(a.isometry / b.isometry) / math.log(b.n_cells / a.n_cells))
        return out

    @property
    def order(self) -> float:
        o = self.orders
        return float(np.mean(o)) if o else math.nan


def isometry_defects(sys: SDESystem, probes: Sequence[ExpState]) -> DefectRow:
    """sup over probe pairs of |⟨Ux,Uy⟩ − ⟨x,y⟩| and of the same for U*."""
    X = np.stack([x.vec for x in probes], axis=1)
    U = solve_causal(sys, probes).values()
    Us = step_product(sys, X, adjoint=True)
    prod = float(np.abs(step_product(sys, X) - U).max())
    gram = X.conj().T @ X
    iso = float(np.abs(U.conj().T @ U - gram).max())
    cois = float(np.abs(Us.conj().T @ Us - gram).max())
    return DefectRow(sys.grid.n_cells, iso, cois, prod)


def evolve_and_test_unitary(make_system: Callable[[GridSpec], SDESystem], grids: Sequence[GridSpec],
                            probe_factory: Callable[[GridSpec], Sequence[ExpState]]) -> DefectReport:
    """Isometry and co-isometry defects of the evolution over a sequence of meshes."""
    rows = []
    for g in grids:
        sys = make_system(g)
        rows.append(isometry_defects(sys, probe_factory(g)))
    return DefectReport(rows)


def hp_system(grid: GridSpec, H: np.ndarray, L: Sequence[np.ndarray], S: Sequence[np.ndarray]) -> SDESystem:
    """Boson generator on P₀ = {FULL}: B^(k)* = L_k, B^(k)∘ = S_k − 1,
    B^(k) = −L_k* S_k, B^(0) = −(iH + ½ Σ L_k* L_k)."""
    h = grid.h0_dim
    I = np.eye(h)
    terms = [Coefficient.make(grid, TIME, FULL, FULL, -(1j * H + 0.5 * sum(l.conj().T @ l for l in L)), I)]
    for k, (l, s) in enumerate(zip(L, S), start=1):
        terms.append(Coefficient.make(grid, ProcessKind("cre", k), FULL, FULL, l, I))
        terms.append(Coefficient.make(grid, ProcessKind("ann", k), FULL, FULL, -l.conj().T @ s, I))
        terms.append(Coefficient.make(grid, ProcessKind("num", k), FULL, FULL, s - I, I))
    return SDESystem.build(grid, terms)


def random_unitary(h: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(h, h)) + 1j * rng.normal(size=(h, h))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(h: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    z = rng.normal(size=(h, h)) + 1j * rng.normal(size=(h, h))
    z = z + z.conj().T
    return scale * z / np.linalg.norm(z, 2)


__all__ = [
    "M_SORTS", "Coefficient", "ConditionRow", "DefectReport", "DefectRow", "FilterSum", "IndependenceReport",
    "MFreeCoefficients", "MFreeExpansion", "PicardReport", "PicardSolution", "SDESystem",
    "StabilizationReport", "Trajectory", "UnitarityCoefficients", "UnitarityReport",
    "adversarial_components", "admissible_check", "closure", "random_chain", "random_system", "color_sets", "evolve_and_test_unitary", "free_conditions",
    "gronwall_bound", "hp_system", "independence_condition", "independence_test",
    "isometry_defects", "m_truncated_conditions", "mfree_filters", "mfree_sde_expand",
    "picard_bound", "picard_solve", "probe_catalog", "random_hermitian", "random_unitary",
    "solve_causal", "stabilization_sweep", "step_product", "unitarity_check", "unitarity_conditions",
]
