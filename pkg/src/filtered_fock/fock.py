"""Truncated model of h0 ⊗ Γ(L²([0,T], G)) on a time × color grid.

One-particle vectors are step functions: one complex coefficient per
(cell, color).  The Fock space is truncated at total particle number
``n_max`` and spanned by occupation multisets over the ``n_cells * n_colors``
orthonormal modes ``χ_cell / √Δ ⊗ e_k``.  States of the full space are flat
arrays indexed ``w * dim_fock + f`` (initial-space index major).

Every operator built here is a :class:`SparseOperator`, a scipy CSR matrix
carrying two pieces of metadata used by the truncation error bound:

``reach``
    the largest change in particle number the untruncated operator can cause;
``growth(n)``
    a nondecreasing bound on the norm of the untruncated operator restricted
    to the degree-``n`` sector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations_with_replacement
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

TIME_TOL = 1e-9
DENSE_CAP = 4000


class FockError(ValueError):
    """Invalid grid, time, color or filter."""


# --------------------------------------------------------------------------
# Filters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Filter:
    """A set of colors, or ``FULL`` (every color, including ones beyond C)."""

    colors: frozenset[int] | None = None

    @classmethod
    def of(cls, colors: Iterable[int]) -> "Filter":
        cs = frozenset(int(c) for c in colors)
        if any(c < 1 for c in cs):
            raise FockError(f"colors start at 1, got {sorted(cs)}")
        return cls(cs)

    @property
    def is_full(self) -> bool:
        return self.colors is None

    def __contains__(self, k: int) -> bool:
        return self.colors is None or k in self.colors

    def __and__(self, other: "Filter") -> "Filter":
        if self.colors is None:
            return other
        if other.colors is None:
            return self
        return Filter(self.colors & other.colors)

    def __or__(self, other: "Filter") -> "Filter":
        if self.colors is None or other.colors is None:
            return FULL
        return Filter(self.colors | other.colors)

    def issubset(self, other: "Filter") -> bool:
        if other.colors is None:
            return True
        if self.colors is None:
            return False
        return self.colors <= other.colors

    def validate(self, n_colors: int) -> "Filter":
        if self.colors is not None and any(c > n_colors for c in self.colors):
            raise FockError(f"filter {self} exceeds {n_colors} colors")
        return self

    def sort_key(self) -> tuple:
        if self.colors is None:
            return (1, ())
        return (0, len(self.colors), tuple(sorted(self.colors)))

    def __str__(self) -> str:
        if self.colors is None:
            return "FULL"
        return "{" + ",".join(str(c) for c in sorted(self.colors)) + "}"

    __repr__ = __str__


FULL = Filter(None)
EMPTY = Filter(frozenset())


def lower_colors(r: int) -> Filter:
    """The filter {1, ..., r-1} (empty for r <= 1)."""
    return Filter(frozenset(range(1, r)))


def all_subsets(n_colors: int) -> list[Filter]:
    out = []
    for mask in range(1 << n_colors):
        out.append(Filter(frozenset(c + 1 for c in range(n_colors) if mask >> c & 1)))
    return sorted(out, key=Filter.sort_key)


# --------------------------------------------------------------------------
# Grid and one-particle vectors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    horizon: float = 1.0
    n_cells: int = 8
    n_colors: int = 3
    n_max: int = 3
    h0_dim: int = 2

    def __post_init__(self):
        if not self.horizon > 0:
            raise FockError("horizon must be positive")
        for name in ("n_cells", "n_colors", "n_max", "h0_dim"):
            if int(getattr(self, name)) < 1:
                raise FockError(f"{name} must be a positive integer")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_cells

    @property
    def n_modes(self) -> int:
        return self.n_cells * self.n_colors

    def mode(self, cell: int, color: int) -> int:
        if not 0 <= cell < self.n_cells:
            raise FockError(f"cell {cell} out of range")
        self.check_color(color)
        return cell * self.n_colors + color - 1

    def check_color(self, k: int) -> int:
        if not 1 <= k <= self.n_colors:
            raise FockError(f"color {k} outside 1..{self.n_colors}")
        return k

    def cell_of(self, t: float) -> int:
        """Grid index j with t = j·Δ; raises for off-grid times."""
        x = t / self.dt
        j = int(round(x))
        if abs(x - j) > TIME_TOL or j < 0 or j > self.n_cells:
            raise FockError(f"time {t} is not a grid point of {self}")
        return j

    def time(self, j: int) -> float:
        return j * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dt

    def with_nmax(self, n_max: int) -> "GridSpec":
        return GridSpec(self.horizon, self.n_cells, self.n_colors, n_max, self.h0_dim)

    @property
    def space(self) -> "FockBasis":
        return fock_basis(self.n_cells, self.n_colors, self.n_max)

    @property
    def dim(self) -> int:
        return self.h0_dim * self.space.dim


@dataclass(frozen=True, eq=False)
class OneParticleVector:
    """Step function u with value ``coef[cell, color-1]`` on each cell."""

    grid: GridSpec
    coef: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=complex)
        if c.shape != (self.grid.n_cells, self.grid.n_colors):
            raise FockError(
                f"coefficient shape {c.shape} does not match grid "
                f"({self.grid.n_cells}, {self.grid.n_colors})"
            )
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coef", c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "OneParticleVector":
        return cls(grid, np.zeros((grid.n_cells, grid.n_colors)))

    @classmethod
    def from_entries(cls, grid: GridSpec, entries: Iterable[tuple]) -> "OneParticleVector":
        c = np.zeros((grid.n_cells, grid.n_colors), dtype=complex)
        for cell, color, re, im in entries:
            grid.mode(int(cell), int(color))
            c[int(cell), int(color) - 1] += complex(re, im)
        return cls(grid, c)

    @classmethod
    def indicator(cls, grid: GridSpec, k: int, s: float, t: float) -> "OneParticleVector":
        """χ_[s,t] ⊗ e_k."""
        c = np.zeros((grid.n_cells, grid.n_colors), dtype=complex)
        c[grid.cell_of(s):grid.cell_of(t), grid.check_color(k) - 1] = 1.0
        return cls(grid, c)

    def inner(self, other: "OneParticleVector") -> complex:
        return complex(self.grid.dt * np.vdot(self.coef, other.coef))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self).real, 0.0))

    @property
    def mode_coefficients(self) -> np.ndarray:
        """Coefficients in the orthonormal mode basis (length n_modes)."""
        return math.sqrt(self.grid.dt) * self.coef.reshape(-1)

    def color_support(self) -> int:
        """N(u): the largest color with a nonzero component (0 if u = 0)."""
        nz = np.nonzero(np.any(self.coef != 0, axis=0))[0]
        return int(nz[-1]) + 1 if len(nz) else 0

    def restrict_colors(self, V: Filter) -> "OneParticleVector":
        c = self.coef.copy()
        for k in range(1, self.grid.n_colors + 1):
            if k not in V:
                c[:, k - 1] = 0
        return OneParticleVector(self.grid, c)

    def restrict_time(self, s: float, t: float) -> "OneParticleVector":
        c = np.zeros_like(self.coef)
        a, b = self.grid.cell_of(s), self.grid.cell_of(t)
        c[a:b] = self.coef[a:b]
        return OneParticleVector(self.grid, c)

    def __add__(self, other: "OneParticleVector") -> "OneParticleVector":
        return OneParticleVector(self.grid, self.coef + other.coef)

    def __sub__(self, other: "OneParticleVector") -> "OneParticleVector":
        return OneParticleVector(self.grid, self.coef - other.coef)

    def __mul__(self, a: complex) -> "OneParticleVector":
        return OneParticleVector(self.grid, a * self.coef)

    __rmul__ = __mul__


# --------------------------------------------------------------------------
# Fock basis
# --------------------------------------------------------------------------


class FockBasis:
    """Occupation multisets of total size <= n_max, degree-major then lexicographic."""

    def __init__(self, n_cells: int, n_colors: int, n_max: int):
        self.n_cells, self.n_colors, self.n_max = n_cells, n_colors, n_max
        d = n_cells * n_colors
        self.n_modes = d
        states: list[tuple[int, ...]] = []
        for n in range(n_max + 1):
            states.extend(combinations_with_replacement(range(d), n))
        self.states = states
        self.index = {s: i for i, s in enumerate(states)}
        self.dim = len(states)
        self.degree = np.array([len(s) for s in states], dtype=np.int64)
        padded = np.full((self.dim, max(n_max, 1)), -1, dtype=np.int64)
        occ = np.zeros((self.dim, d), dtype=np.int16)
        for i, s in enumerate(states):
            padded[i, : len(s)] = s
            for m in s:
                occ[i, m] += 1
        self.padded = padded
        self.occ = occ
        fact = np.ones(self.dim)
        for m in range(2, n_max + 1):
            fact *= np.where(occ >= m, m, 1).prod(axis=1)
        self.multinomial = fact  # ∏ m_i!
        self.mode_color = np.arange(d) % n_colors + 1
        self.mode_cell = np.arange(d) // n_colors
        occ_color = np.zeros((self.dim, n_colors), dtype=np.int16)
        for k in range(n_colors):
            occ_color[:, k] = occ[:, k::n_colors].sum(axis=1)
        self.occ_color = occ_color
        present = occ_color > 0
        self.color_mask = (present * (1 << np.arange(n_colors))).sum(axis=1)
        self.max_color = np.where(
            present.any(axis=1), n_colors - np.argmax(present[:, ::-1], axis=1), 0
        )
        self._lower: dict[int, sp.csr_matrix] = {}

    def lowering(self, mode: int) -> sp.csr_matrix:
        """Annihilation operator of one orthonormal mode on the Fock factor."""
        if mode not in self._lower:
            src = np.nonzero(self.occ[:, mode] > 0)[0]
            tgt = np.empty(len(src), dtype=np.int64)
            for j, i in enumerate(src):
                s = list(self.states[i])
                s.remove(mode)
                tgt[j] = self.index[tuple(s)]
            vals = np.sqrt(self.occ[src, mode].astype(float))
            self._lower[mode] = sp.csr_matrix(
                (vals, (tgt, src)), shape=(self.dim, self.dim)
            )
        return self._lower[mode]

    def filter_mask(self, V: Filter, modes: np.ndarray | None = None) -> np.ndarray:
        """States whose occupied modes (optionally only those in ``modes``) have colors in V."""
        if V.is_full:
            return np.ones(self.dim, dtype=bool)
        bad = [k for k in range(1, self.n_colors + 1) if k not in V]
        if not bad:
            return np.ones(self.dim, dtype=bool)
        cols = np.array([m for m in range(self.n_modes) if self.mode_color[m] in bad], dtype=np.int64)
        if modes is not None:
            cols = np.intersect1d(cols, modes)
        if len(cols) == 0:
            return np.ones(self.dim, dtype=bool)
        return ~np.any(self.occ[:, cols] > 0, axis=1)

    def split_indices(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """For each state, indices of its past part (cells < j) and future part."""
        return _split_indices(self, j)

    def describe(self, i: int) -> str:
        s = self.states[i]
        return "(" + " ".join(
            f"{self.mode_cell[m]}:{self.mode_color[m]}" for m in s
        ) + ")"


@lru_cache(maxsize=16)
def fock_basis(n_cells: int, n_colors: int, n_max: int) -> FockBasis:
    return FockBasis(n_cells, n_colors, n_max)


@lru_cache(maxsize=64)
def _split_cache(key) -> tuple[np.ndarray, np.ndarray]:
    basis, j = key
    cut = j * basis.n_colors
    past = np.empty(basis.dim, dtype=np.int64)
    fut = np.empty(basis.dim, dtype=np.int64)
    for i, s in enumerate(basis.states):
        p = tuple(m for m in s if m < cut)
        past[i] = basis.index[p]
        fut[i] = basis.index[s[len(p):]]
    return past, fut


def _split_indices(basis: FockBasis, j: int):
    return _split_cache((basis, j))


# --------------------------------------------------------------------------
# Operators with truncation metadata
# --------------------------------------------------------------------------

Growth = Callable[[int], float]


def _const(c: float) -> Growth:
    return lambda n: c


def _memo(g: Growth) -> Growth:
    # composed bounds are evaluated many times along nested words
    return lru_cache(maxsize=None)(g)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """A sparse matrix on h0 ⊗ Γ_{≤n_max} with truncation metadata."""

    grid: GridSpec
    mat: sp.csr_matrix
    reach: int = 0
    growth: Growth | None = None
    label: str = ""

    def __post_init__(self):
        m = sp.csr_matrix(self.mat, dtype=complex)
        if m.shape != (self.grid.dim, self.grid.dim):
            raise FockError(f"operator shape {m.shape} != {self.grid.dim}")
        m.eliminate_zeros()
        object.__setattr__(self, "mat", m)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(
                self.grid,
                self.mat @ other.mat,
                self.reach + other.reach,
                _compose(self.growth, self.reach, other.growth, other.reach),
                f"{self.label}·{other.label}",
            )
        return self.mat @ other

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        g1, g2 = self.growth, other.growth
        g = None if g1 is None or g2 is None else _memo(lambda n: g1(n) + g2(n))
        return SparseOperator(
            self.grid, self.mat + other.mat, max(self.reach, other.reach), g,
            f"({self.label}+{other.label})",
        )

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return self + other.scale(-1.0)

    def scale(self, a: complex) -> "SparseOperator":
        g = self.growth
        return SparseOperator(
            self.grid, a * self.mat, self.reach,
            None if g is None else _memo(lambda n: abs(a) * g(n)), self.label,
        )

    __mul__ = scale
    __rmul__ = scale

    @property
    def H(self) -> "SparseOperator":
        g, d = self.growth, self.reach
        gh = None if g is None else _memo(lambda n: math.sqrt(2 * d + 1) * g(n + d))
        return SparseOperator(self.grid, self.mat.conj().T.tocsr(), d, gh, f"{self.label}†")

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.mat @ vec

    @property
    def bound(self) -> OpBound:
        if self.growth is None:
            raise FockError(f"operator {self.label!r} carries no growth bound")
        return OpBound(self.reach, self.growth)

    def dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.mat.shape[0] > cap:
            raise FockError(f"dense materialization of dim {self.mat.shape[0]} exceeds cap {cap}")
        return self.mat.toarray()

    def tail_bound(self, x_norm: float, y_norm: float, y_scale: float, n_max: int) -> float:
        """Bound on |⟨x, O y⟩_truncated − ⟨x, O y⟩| for y = z ε(v).

        ``y_norm = ‖z‖`` and ``y_scale = ‖v‖``; ``x_norm`` is the untruncated ‖x‖.
        """
        if self.growth is None:
            return math.inf
        return 2.0 * x_norm * y_norm * exp_tail_series(self.growth, y_scale, n_max - self.reach + 1)


@dataclass(frozen=True, eq=False)
class OpBound:
    """Truncation metadata of an operator word without its matrix."""

    reach: int
    growth: Growth

    def __matmul__(self, other: "OpBound") -> "OpBound":
        return OpBound(self.reach + other.reach,
                       _compose(self.growth, self.reach, other.growth, other.reach))

    def __add__(self, other: "OpBound") -> "OpBound":
        g1, g2 = self.growth, other.growth
        return OpBound(max(self.reach, other.reach), _memo(lambda n: g1(n) + g2(n)))

    def scale(self, a: float) -> "OpBound":
        g = self.growth
        return OpBound(self.reach, _memo(lambda n: abs(a) * g(n)))

    @property
    def H(self) -> "OpBound":
        g, d = self.growth, self.reach
        return OpBound(d, _memo(lambda n: math.sqrt(2 * d + 1) * g(n + d)))

    def tail_bound(self, x_norm: float, y_norm: float, y_scale: float, n_max: int) -> float:
        return 2.0 * x_norm * y_norm * exp_tail_series(self.growth, y_scale, n_max - self.reach + 1)

    def tail_between(self, x: "ExpState", y: "ExpState") -> float:
        """Bound on |⟨x, O y⟩_truncated − ⟨x, O y⟩| for exponential states x, y."""
        return self.tail_bound(x.exact_norm, y.w_norm, y.u.norm(), y.grid.n_max)


ZERO_BOUND = OpBound(0, lambda n: 0.0)


def _compose(ga, da, gb, db):
    if ga is None or gb is None:
        return None
    f = math.sqrt(2 * db + 1)
    return _memo(lambda n: ga(n + db) * gb(n) * f)


def exp_tail_series(growth: Growth, scale: float, start: int, tol: float = 1e-18) -> float:
    """Σ_{n >= start} growth(n) scale^n / √n!  (terms of a degree-n exponential sector)."""
    start = max(start, 0)
    if scale == 0.0:
        return growth(0) if start == 0 else 0.0
    total = 0.0
    log_s = math.log(scale)
    n = start
    while True:
        term = growth(n) * math.exp(n * log_s - 0.5 * math.lgamma(n + 1))
        total += term
        if n > start + 5 and n > 2 * scale * scale and term < tol * max(total, 1e-300):
            break
        n += 1
        if n > start + 2000:
            break
    return total


def sector_norm(scale: float, n: int) -> float:
    """‖ε(v)_n‖ = ‖v‖^n / √n!."""
    return scale**n / math.sqrt(math.factorial(n))


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------


def lift_fock(grid: GridSpec, m: sp.spmatrix) -> sp.csr_matrix:
    if grid.h0_dim == 1:
        return sp.csr_matrix(m)
    return sp.kron(sp.identity(grid.h0_dim, format="csr"), m, format="csr")


def lift_initial(grid: GridSpec, a: np.ndarray) -> sp.csr_matrix:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    if a.shape != (grid.h0_dim, grid.h0_dim):
        raise FockError(f"initial-space matrix shape {a.shape} != h0_dim {grid.h0_dim}")
    return sp.kron(sp.csr_matrix(a), sp.identity(grid.space.dim, format="csr"), format="csr")


def identity(grid: GridSpec) -> SparseOperator:
    return SparseOperator(grid, sp.identity(grid.dim, format="csr"), 0, _const(1.0), "I")


def zero(grid: GridSpec) -> SparseOperator:
    return SparseOperator(grid, sp.csr_matrix((grid.dim, grid.dim)), 0, _const(0.0), "0")


def initial_operator(grid: GridSpec, a: np.ndarray, label: str = "h0") -> SparseOperator:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    nrm = float(np.linalg.norm(a, 2)) if a.size else 0.0
    return SparseOperator(grid, lift_initial(grid, a), 0, _const(nrm), label)


def diagonal_operator(grid: GridSpec, diag: np.ndarray, label: str = "diag",
                      growth: Growth | None = None) -> SparseOperator:
    """Fock-diagonal operator (ampliated to h0) from one value per Fock state."""
    diag = np.asarray(diag)
    if growth is None:
        growth = _const(float(np.max(np.abs(diag))) if diag.size else 0.0)
    return SparseOperator(grid, lift_fock(grid, sp.diags(diag.astype(complex), format="csr")),
                          0, growth, label)


@lru_cache(maxsize=512)
def color_projection(V: Filter, grid: GridSpec) -> SparseOperator:
    """P^(V): keep states built only from colors in V (P^(∅) = vacuum projection)."""
    V.validate(grid.n_colors)
    mask = grid.space.filter_mask(V)
    return diagonal_operator(grid, mask.astype(float), f"P{V}", _const(1.0))


@lru_cache(maxsize=512)
def band_projection(k: int, grid: GridSpec) -> SparseOperator:
    """P^[k]: states whose largest color is exactly k (P^[0] is the vacuum projection)."""
    if not 0 <= k <= grid.n_colors:
        raise FockError(f"band {k} outside 0..{grid.n_colors}")
    mask = grid.space.max_color == k
    return diagonal_operator(grid, mask.astype(float), f"P[{k}]", _const(1.0))


@lru_cache(maxsize=512)
def future_projection(V: Filter, t: float, grid: GridSpec) -> SparseOperator:
    """P^(V) acting only on the modes of cells at or after t (identity on the past)."""
    j = grid.cell_of(t)
    space = grid.space
    modes = np.arange(j * grid.n_colors, space.n_modes)
    mask = space.filter_mask(V, modes)
    return diagonal_operator(grid, mask.astype(float), f"P{V}[{t:g}", _const(1.0))


@lru_cache(maxsize=512)
def past_projection(V: Filter, t: float, grid: GridSpec) -> SparseOperator:
    """P^(V) acting only on the modes of cells before t."""
    j = grid.cell_of(t)
    modes = np.arange(0, j * grid.n_colors)
    mask = grid.space.filter_mask(V, modes)
    return diagonal_operator(grid, mask.astype(float), f"P{V}{t:g}]", _const(1.0))


def annihilation(f: OneParticleVector) -> SparseOperator:
    """a(f) = Σ_i conj(f_i) a_i in the orthonormal mode basis."""
    grid = f.grid
    space = grid.space
    c = f.mode_coefficients
    m = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for i in np.nonzero(c)[0]:
        m = m + np.conj(c[i]) * space.lowering(int(i))
    nf = f.norm()
    return SparseOperator(grid, lift_fock(grid, m), 1, lambda n: nf * math.sqrt(n), "a")


def creation(f: OneParticleVector) -> SparseOperator:
    """a*(f) compressed to degree <= n_max; exactly the adjoint of :func:`annihilation`."""
    grid = f.grid
    space = grid.space
    c = f.mode_coefficients
    m = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for i in np.nonzero(c)[0]:
        m = m + c[i] * space.lowering(int(i)).T
    nf = f.norm()
    return SparseOperator(grid, lift_fock(grid, m.tocsr()), 1, lambda n: nf * math.sqrt(n + 1), "a*")


def number_in_cells(k: int, j0: int, j1: int, grid: GridSpec) -> SparseOperator:
    """λ(I_[t_j0, t_j1] ⊗ |e_k⟩⟨e_k|): occupation of color k in cells j0..j1-1."""
    grid.check_color(k)
    cols = [grid.mode(c, k) for c in range(j0, j1)]
    counts = grid.space.occ[:, cols].sum(axis=1) if cols else np.zeros(grid.space.dim)
    return diagonal_operator(grid, counts.astype(float), f"N{k}", lambda n: float(n))


def second_quantized_permutation(perm: Sequence[int], grid: GridSpec) -> SparseOperator:
    """Γ(π) for a permutation π of the one-particle modes (a unitary, degree preserving)."""
    space = grid.space
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(space.n_modes)):
        raise FockError("not a permutation of the modes")
    occ = space.occ
    moved = np.empty_like(occ)
    moved[:, perm] = occ
    # the image rows are a reordering of the basis rows; match them by sorting
    src_order = np.lexsort(occ.T[::-1])
    img_order = np.lexsort(moved.T[::-1])
    tgt = np.empty(space.dim, dtype=np.int64)
    tgt[img_order] = src_order
    m = sp.csr_matrix((np.ones(space.dim), (tgt, np.arange(space.dim))), shape=(space.dim, space.dim))
    return SparseOperator(grid, lift_fock(grid, m), 0, _const(1.0), "Γ(π)")


# --------------------------------------------------------------------------
# Vectors
# --------------------------------------------------------------------------


def fock_exponential(u: OneParticleVector) -> np.ndarray:
    """Truncated ε(u) on the Fock factor: amplitude ∏ c_i^{m_i} / √(∏ m_i!)."""
    space = u.grid.space
    c = np.append(u.mode_coefficients, 1.0)  # index -1 -> 1 for padding
    amp = c[space.padded].prod(axis=1)
    return amp / np.sqrt(space.multinomial)


def exponential_vector(u: OneParticleVector, w: np.ndarray | None = None) -> np.ndarray:
    """w ⊗ ε(u) as a state vector (w defaults to the first initial basis vector)."""
    grid = u.grid
    if w is None:
        w = np.zeros(grid.h0_dim, dtype=complex)
        w[0] = 1.0
    w = np.asarray(w, dtype=complex)
    if w.shape != (grid.h0_dim,):
        raise FockError(f"initial vector shape {w.shape} != ({grid.h0_dim},)")
    return np.kron(w, fock_exponential(u))


def vacuum(grid: GridSpec, w: np.ndarray | None = None) -> np.ndarray:
    return exponential_vector(OneParticleVector.zeros(grid), w)


def exp_partial_sum(z: complex, n_max: int) -> complex:
    """Σ_{n <= n_max} z^n / n!."""
    return complex(sum(z**n / math.factorial(n) for n in range(n_max + 1)))


@dataclass(frozen=True, eq=False)
class ExpState:
    """A pure state w ⊗ ε(u) together with its defining data."""

    w: np.ndarray
    u: OneParticleVector

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @cached_property
    def vec(self) -> np.ndarray:
        return exponential_vector(self.u, self.w)

    @property
    def w_norm(self) -> float:
        return float(np.linalg.norm(self.w))

    @property
    def exact_norm(self) -> float:
        """Untruncated ‖w ε(u)‖ = ‖w‖ e^{‖u‖²/2}."""
        return self.w_norm * math.exp(0.5 * self.u.norm() ** 2)

    def split(self, t: float) -> tuple["ExpState", "ExpState"]:
        return past_future_split(self, t)


def past_future_split(x: ExpState, t: float) -> tuple[ExpState, ExpState]:
    """w ε(u) ↦ (w ε(u_{t]}), ε(u_{[t})); the future part carries w = e_0 = 1 scalar slot."""
    grid = x.grid
    grid.cell_of(t)
    past = ExpState(x.w, x.u.restrict_time(0.0, t))
    e0 = np.zeros(grid.h0_dim, dtype=complex)
    e0[0] = 1.0
    future = ExpState(e0, x.u.restrict_time(t, grid.horizon))
    return past, future


def tensor_past_future(past: np.ndarray, future: np.ndarray, t: float, grid: GridSpec) -> np.ndarray:
    """Recombine a past state (h0 ⊗ past modes) with a Fock vector on future modes.

    ``future`` is a Fock-factor vector (length dim_fock) supported on states whose
    modes all lie at or after t.  The truncated tensor product drops every
    component whose total degree exceeds n_max.
    """
    space = grid.space
    j = grid.cell_of(t)
    pidx, fidx = space.split_indices(j)
    p = past.reshape(grid.h0_dim, space.dim)
    out = p[:, pidx] * future[fidx][None, :]
    return out.reshape(-1)


def inner(x: np.ndarray, y: np.ndarray) -> complex:
    return complex(np.vdot(x, y))


def dump_vector(vec: np.ndarray, grid: GridSpec, tol: float = 0.0) -> str:
    """Text dump, one line per basis index: ``degree | mode-multiset | re | im``.

    Multisets list ``cell:color`` pairs; with h0_dim > 1 the initial index is
    prefixed as ``w=<i>``.
    """
    space = grid.space
    v = np.asarray(vec).reshape(grid.h0_dim, space.dim)
    lines = []
    for a in range(grid.h0_dim):
        for i in range(space.dim):
            z = v[a, i]
            if abs(z) <= tol and tol > 0:
                continue
            prefix = f"w={a} " if grid.h0_dim > 1 else ""
            lines.append(
                f"{space.degree[i]} | {prefix}{space.describe(i)} | {z.real:.12e} | {z.imag:.12e}"
            )
    return "\n".join(lines)
