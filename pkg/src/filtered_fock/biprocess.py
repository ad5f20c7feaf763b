"""Simple (D,E)-adapted biprocesses, adapted processes and the adaptedness checker.

A simple biprocess ``F ⊗ G`` is stored as a partition ``0 = t_0 < ... < t_n``
of grid times and, for every piece ``[t_j, t_{j+1})``, the operators
``F(t_j)`` and ``G(t_j)``.  Values vanish after ``t_n``.  The filters ``D``
and ``E`` record how ``F`` and ``G`` act on the future of each ``t_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .fock import (
    EMPTY,
    FULL,
    Filter,
    FockError,
    GridSpec,
    SparseOperator,
    all_subsets,
    color_projection,
    diagonal_operator,
    future_projection,
    identity,
    initial_operator,
    number_in_cells,
    past_projection,
    second_quantized_permutation,
    zero,
)
from .processes import ProcessKind, Summand, signed_filters

ADAPT_RTOL = 1e-12


# --------------------------------------------------------------------------
# Values
# --------------------------------------------------------------------------


def ampliation(grid: GridSpec, t: float, h0: np.ndarray | None = None,
               past: SparseOperator | None = None, V: Filter = FULL) -> SparseOperator:
    """h0-matrix ⊗ past operator ⊗ P^(V) on the modes at or after t."""
    op = future_projection(V.validate(grid.n_colors), t, grid)
    if past is not None:
        op = past @ op
    if h0 is not None:
        op = initial_operator(grid, h0) @ op
    return op


@dataclass(frozen=True, eq=False)
class SimpleBiprocess:
    grid: GridSpec
    times: tuple[float, ...]
    left: tuple[SparseOperator, ...]
    right: tuple[SparseOperator, ...]
    D: Filter = FULL
    E: Filter = FULL
    label: str = ""

    def __post_init__(self):
        g = self.grid
        times = tuple(float(t) for t in self.times)
        idx = [g.cell_of(t) for t in times]
        if not idx or idx[0] != 0:
            raise FockError("a partition starts at t = 0")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise FockError(f"partition times must increase: {times}")
        n = len(times) - 1
        if len(self.left) != n or len(self.right) != n:
            raise FockError(f"{n} partition pieces need {n} left and right values")
        self.D.validate(g.n_colors)
        self.E.validate(g.n_colors)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "right", tuple(self.right))
        object.__setattr__(self, "_cells", tuple(idx))

    @classmethod
    def constant(cls, grid: GridSpec, F: SparseOperator, G: SparseOperator,
                 D: Filter = FULL, E: Filter = FULL, end: float | None = None,
                 label: str = "") -> "SimpleBiprocess":
        end = grid.horizon if end is None else end
        return cls(grid, (0.0, end), (F,), (G,), D, E, label)

    @classmethod
    def identity(cls, grid: GridSpec, end: float | None = None) -> "SimpleBiprocess":
        I = identity(grid)
        return cls.constant(grid, I, I, FULL, FULL, end, "I⊗I")

    @property
    def n_pieces(self) -> int:
        return len(self.left)

    @property
    def end(self) -> float:
        return self.times[-1]

    @property
    def filter(self) -> Filter:
        return self.D & self.E

    def piece_of_cell(self, c: int) -> int | None:
        """Index of the piece containing grid cell c, or None past the end."""
        cells = self._cells
        if c < 0 or c >= cells[-1]:
            return None
        return int(np.searchsorted(cells, c, side="right")) - 1

    def value_at_cell(self, c: int) -> tuple[SparseOperator, SparseOperator]:
        j = self.piece_of_cell(c)
        if j is None:
            z = zero(self.grid)
            return z, z
        return self.left[j], self.right[j]

    def pieces(self, t: float | None = None) -> Iterator[tuple[int, int, SparseOperator, SparseOperator]]:
        """(first cell, end cell, F, G) for the pieces cut at t."""
        jt = self.grid.n_cells if t is None else self.grid.cell_of(t)
        cells = self._cells
        for j in range(self.n_pieces):
            a, b = cells[j], min(cells[j + 1], jt)
            if b > a:
                yield a, b, self.left[j], self.right[j]

    def refine(self, extra: Iterable[float]) -> "SimpleBiprocess":
        """Same values on a finer partition."""
        ts = sorted({*self.times, *(float(x) for x in extra if x < self.end)},
                    key=self.grid.cell_of)
        left, right = [], []
        for t in ts[:-1]:
            F, G = self.value_at_cell(self.grid.cell_of(t))
            left.append(F)
            right.append(G)
        return replace(self, times=tuple(ts), left=tuple(left), right=tuple(right))

    def scale(self, a: complex) -> "SimpleBiprocess":
        return replace(self, left=tuple(F.scale(a) for F in self.left))

    def with_values(self, left: Sequence[SparseOperator], right: Sequence[SparseOperator],
                    D: Filter, E: Filter) -> "SimpleBiprocess":
        return replace(self, left=tuple(left), right=tuple(right), D=D, E=E)

    def color_bounds(self) -> tuple[int, int]:
        """Largest colors reachable in the ranges of F and G (the recorded p, q)."""
        return _range_color(self.left, self.grid), _range_color(self.right, self.grid)

    def __str__(self) -> str:
        ts = ",".join(f"{t:g}" for t in self.times)
        return self.label or f"[F|{self.D}] ⊗ [G|{self.E}] on ({ts})"


def _range_color(ops: Sequence[SparseOperator], grid: GridSpec) -> int:
    space = grid.space
    best = 0
    for op in ops:
        rows = np.unique(op.mat.nonzero()[0]) % space.dim
        if len(rows):
            best = max(best, int(space.max_color[rows].max()))
    return best


@dataclass(frozen=True)
class Biprocess:
    """A filtered-adapted biprocess: a finite sum of simple terms."""

    terms: tuple[SimpleBiprocess, ...] = ()

    def __add__(self, other: "Biprocess | SimpleBiprocess") -> "Biprocess":
        extra = (other,) if isinstance(other, SimpleBiprocess) else other.terms
        return Biprocess(self.terms + extra)

    def groups(self) -> dict[tuple[Filter, Filter], list[SimpleBiprocess]]:
        out: dict[tuple[Filter, Filter], list[SimpleBiprocess]] = {}
        for X in self.terms:
            out.setdefault((X.D, X.E), []).append(X)
        return dict(sorted(out.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1].sort_key())))


def as_biprocess(X: "SimpleBiprocess | Biprocess") -> Biprocess:
    return X if isinstance(X, Biprocess) else Biprocess((X,))


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """A step process H with filter V: value ``values[j]`` on ``[times[j], times[j+1])``."""

    grid: GridSpec
    times: tuple[float, ...]
    values: tuple[SparseOperator, ...]
    filter: Filter = FULL

    def value_at_cell(self, c: int) -> SparseOperator:
        cells = [self.grid.cell_of(t) for t in self.times]
        if c < 0 or c >= cells[-1]:
            return zero(self.grid)
        return self.values[int(np.searchsorted(cells, c, side="right")) - 1]


def biprocess_product(X: SimpleBiprocess | Biprocess) -> AdaptedProcess | tuple[AdaptedProcess, ...]:
    """B ⊨ X: the pointwise products F(t)G(t), with filter D∩E."""
    if isinstance(X, Biprocess):
        return tuple(biprocess_product(T) for T in X.terms)
    vals = tuple(F @ G for F, G in zip(X.left, X.right))
    return AdaptedProcess(X.grid, X.times, vals, X.D & X.E)


# --------------------------------------------------------------------------
# Adaptedness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptednessReport:
    ok: bool
    filter: Filter
    t: float
    residual: float
    witness: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def _expected_factorized(H: SparseOperator, t: float, V: Filter):
    """Rebuild H̃ ⊗ P^(V) from H's action on future-vacuum states.

    Returns (matrix, witness) where witness names a future-vacuum column whose
    image leaves the past (so no factorization exists at t).
    """
    grid = H.grid
    space = grid.space
    nF = space.dim
    j = grid.cell_of(t)
    pidx, fidx = space.split_indices(j)
    fut_ok = space.filter_mask(V, np.arange(j * grid.n_colors, space.n_modes))
    Hc = H.mat.tocsc()
    # source column for every column: same initial index, future part dropped
    a = np.repeat(np.arange(grid.h0_dim), nF)
    s = np.tile(np.arange(nF), grid.h0_dim)
    src = a * nF + pidx[s]
    keep = fut_ok[s]
    cols = np.nonzero(keep)[0]
    M = Hc[:, src[cols]].tocoo()
    rows = M.row
    rf = rows % nF
    if np.any(fidx[rf] != 0):
        bad = int(np.nonzero(fidx[rf] != 0)[0][0])
        col = int(src[cols[M.col[bad]]])
        return None, f"w={col // nF} {space.describe(col % nF)} maps into future state {space.describe(int(rf[bad]))}"
    out_cols = cols[M.col]
    f_of_col = fidx[s[out_cols]]
    states, index = space.states, space.index
    tgt = np.empty(len(rows), dtype=np.int64)
    for i in range(len(rows)):
        merged = states[rf[i]] + states[f_of_col[i]]
        tgt[i] = index.get(merged, -1)
    ok = tgt >= 0
    tgt_full = (rows // nF) * nF + tgt
    E = sp.csr_matrix((M.data[ok], (tgt_full[ok], out_cols[ok])), shape=H.mat.shape)
    return E, None


def check_adapted(H: SparseOperator, t: float, V: Filter) -> AdaptednessReport:
    """Is H = H̃ ⊗ P^(V) across the past/future split at t?"""
    V.validate(H.grid.n_colors)
    E, witness = _expected_factorized(H, t, V)
    if E is None:
        return AdaptednessReport(False, V, t, float("inf"), witness)
    diff = (H.mat - E).tocoo()
    scale = max(1.0, float(abs(H.mat).max()) if H.mat.nnz else 1.0)
    res = float(np.abs(diff.data).max()) if diff.nnz else 0.0
    if res <= ADAPT_RTOL * scale:
        return AdaptednessReport(True, V, t, res)
    k = int(np.argmax(np.abs(diff.data)))
    nF = H.grid.space.dim
    col = int(diff.col[k])
    return AdaptednessReport(False, V, t, res,
                             f"column w={col // nF} {H.grid.space.describe(col % nF)} differs by {res:.3e}")


def minimal_filter(H: SparseOperator, t: float) -> Filter | None:
    """Smallest filter V with H (t, V)-adapted, or None.

    Subsets are tried by increasing size; when only the set of all C colors
    passes, FULL is reported since the truncated model cannot tell them apart.
    """
    C = H.grid.n_colors
    top = Filter(frozenset(range(1, C + 1)))
    for V in all_subsets(C):
        if check_adapted(H, t, V):
            return FULL if V == top else V
    return None


def check_adaptedness(H: "SparseOperator | SimpleBiprocess", t: float, D: Filter,
                      E: Filter = FULL) -> AdaptednessReport:
    """Def-3.1-style check: an operator against filter D, or both sides of a biprocess."""
    if isinstance(H, SparseOperator):
        return check_adapted(H, t, D)
    c = H.grid.cell_of(t)
    j = H.piece_of_cell(c) if c < H.grid.n_cells else H.piece_of_cell(c - 1)
    if j is None:
        return AdaptednessReport(True, D, t, 0.0)
    if H.grid.cell_of(H.times[j]) > c:
        raise FockError("value is not defined before its partition time")
    rep = check_adapted(H.left[j], t, D)
    if not rep:
        return rep
    return check_adapted(H.right[j], t, E)


# --------------------------------------------------------------------------
# Rewriting filtered integrands
# --------------------------------------------------------------------------


def _project_side(X: SimpleBiprocess, W: Filter, on_left: bool, coef: float) -> SimpleBiprocess:
    if W.is_full:
        return X if coef == 1.0 else X.scale(coef)
    P = color_projection(W, X.grid)
    if on_left:
        left = tuple((F @ P).scale(coef) for F in X.left)
        return X.with_values(left, X.right, X.D & W, X.E)
    right = tuple(P @ G for G in X.right)
    left = X.left if coef == 1.0 else tuple(F.scale(coef) for F in X.left)
    return X.with_values(left, right, X.D, X.E & W)


def rewrite_for_summand(X: SimpleBiprocess | Biprocess, sm: Summand) -> Biprocess:
    """X[η, V]: move the summand's projection onto F (ann, num, time) or G (cre)."""
    Xb = as_biprocess(X)
    on_left = sm.kind.sort != "cre"
    if sm.kind.sort == "cre" and sm.side != "right":
        raise FockError("creation summands carry their projection on the right")
    if sm.kind.sort == "ann" and sm.side != "left":
        raise FockError("annihilation summands carry their projection on the left")
    terms = []
    for T in Xb.terms:
        for coef, W in signed_filters(sm.proj):
            terms.append(_project_side(T, W, on_left, coef))
    return Biprocess(tuple(terms))


def rewrite_filtered_integrand(X: SimpleBiprocess | Biprocess, kind: ProcessKind,
                               V: Filter) -> Biprocess:
    """X[η, V] with ∫X # dA^(η,V) = ∫X[η,V] # dA^η."""
    from .processes import FilteredKind

    return rewrite_for_summand(X, FilteredKind(kind, V).summand)


# --------------------------------------------------------------------------
# Random degree-preserving biprocesses
# --------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _swap_operator(grid: GridSpec, cell: int, c1: int, c2: int) -> SparseOperator:
    perm = list(range(grid.n_modes))
    a, b = grid.mode(cell, c1), grid.mode(cell, c2)
    perm[a], perm[b] = perm[b], perm[a]
    return second_quantized_permutation(perm, grid)


@lru_cache(maxsize=256)
def _phase_operator(grid: GridSpec, k: int, j: int, theta: float) -> SparseOperator:
    counts = np.asarray(number_in_cells(k, 0, j, grid).mat.diagonal()[: grid.space.dim].real)
    return diagonal_operator(grid, np.exp(1j * theta * counts), f"e^(iθN{k})")


def random_past_operator(grid: GridSpec, t: float, rng: np.random.Generator,
                         mix_colors: bool = True) -> SparseOperator:
    """A degree-preserving contraction acting only on modes before t.

    With ``mix_colors=False`` the color swap is skipped, so the result
    commutes with every color and band projection.
    """
    j = grid.cell_of(t)
    if j == 0:
        return identity(grid)
    factors = []
    for _ in range(int(rng.integers(1, 3))):
        choice = int(rng.integers(0, 4))
        if choice == 1:
            V = all_subsets(grid.n_colors)[int(rng.integers(0, 1 << grid.n_colors))]
            factors.append(past_projection(V, t, grid))
        elif choice == 2:
            k = int(rng.integers(1, grid.n_colors + 1))
            theta = round(float(rng.uniform(-np.pi, np.pi)), 3)
            factors.append(_phase_operator(grid, k, j, theta))
        elif choice == 3 and grid.n_colors > 1:
            cell = int(rng.integers(0, j))
            c1, c2 = rng.choice(np.arange(1, grid.n_colors + 1), size=2, replace=False)
            if mix_colors:
                factors.append(_swap_operator(grid, cell, int(c1), int(c2)))
    if not factors:
        return identity(grid)
    op = factors[0]
    for f in factors[1:]:
        op = op @ f
    return op


def random_h0(grid: GridSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    n = grid.h0_dim
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * rng.uniform(0.5, 1.0) * a / np.linalg.norm(a, 2)


def random_value(grid: GridSpec, t: float, V: Filter, rng: np.random.Generator,
                 mix_colors: bool = True) -> SparseOperator:
    return ampliation(grid, t, random_h0(grid, rng), random_past_operator(grid, t, rng, mix_colors), V)


def random_partition(grid: GridSpec, rng: np.random.Generator, max_pieces: int = 3,
                     end: float | None = None) -> tuple[float, ...]:
    jend = grid.n_cells if end is None else grid.cell_of(end)
    n = int(rng.integers(1, max_pieces + 1))
    inner = sorted(rng.choice(np.arange(1, jend), size=min(n - 1, jend - 1), replace=False)) if jend > 1 else []
    return tuple(grid.time(int(j)) for j in [0, *inner, jend])


def random_simple_biprocess(grid: GridSpec, rng: np.random.Generator, D: Filter = FULL,
                            E: Filter = FULL, max_pieces: int = 3,
                            end: float | None = None, mix_colors: bool = True) -> SimpleBiprocess:
    """Random (D,E)-adapted simple biprocess with degree-preserving values."""
    times = random_partition(grid, rng, max_pieces, end)
    left = tuple(random_value(grid, t, D, rng, mix_colors) for t in times[:-1])
    right = tuple(random_value(grid, t, E, rng, mix_colors) for t in times[:-1])
    return SimpleBiprocess(grid, times, left, right, D, E, f"random[{D}|{E}]")


def random_filter(grid: GridSpec, rng: np.random.Generator, allow_full: bool = True) -> Filter:
    subs = all_subsets(grid.n_colors)
    i = int(rng.integers(0, len(subs) + (1 if allow_full else 0)))
    return FULL if i == len(subs) else subs[i]


__all__ = [
    "ADAPT_RTOL", "AdaptedProcess", "AdaptednessReport", "Biprocess", "EMPTY", "SimpleBiprocess",
    "ampliation", "as_biprocess", "biprocess_product", "check_adapted", "check_adaptedness",
    "minimal_filter", "random_filter", "random_h0", "random_partition", "random_past_operator",
    "random_simple_biprocess", "random_value", "rewrite_filtered_integrand", "rewrite_for_summand",
]
