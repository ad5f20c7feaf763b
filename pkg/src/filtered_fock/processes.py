"""Filtered fundamental processes and extended m-free processes.

A filtered process is a CCR process multiplied by a color projection on one
side; an m-free process is a finite sum of such products in which the
projections are bands P^[k] (largest color exactly k) or the filter
{1, ..., m-1}.  Both are described by lists of :class:`Summand` records so
that integrals against them can be rewritten into CCR integrals.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

from .fock import (
    EMPTY,
    FULL,
    Filter,
    FockError,
    GridSpec,
    OneParticleVector,
    SparseOperator,
    annihilation,
    band_projection,
    color_projection,
    creation,
    identity,
    lower_colors,
    number_in_cells,
)

Sort = Literal["ann", "cre", "num", "time"]
_SORTS = ("ann", "cre", "num", "time")


@dataclass(frozen=True, order=True)
class ProcessKind:
    """One of annihilation(k), creation(k), number(k) or time."""

    sort: Sort
    k: int = 0

    def __post_init__(self):
        if self.sort not in _SORTS:
            raise FockError(f"unknown process sort {self.sort!r}")
        if self.sort == "time" and self.k != 0:
            raise FockError("time process carries no color")
        if self.sort != "time" and self.k < 1:
            raise FockError(f"{self.sort} needs a color >= 1")

    @property
    def dual(self) -> "ProcessKind":
        swap = {"ann": "cre", "cre": "ann"}
        return ProcessKind(swap.get(self.sort, self.sort), self.k)

    @property
    def token(self) -> str:
        return {"ann": f"dA({self.k})", "cre": f"dA*({self.k})",
                "num": f"dN({self.k})", "time": "dT"}[self.sort]

    def __str__(self) -> str:
        return self.token


def ann(k: int) -> ProcessKind:
    return ProcessKind("ann", k)


def cre(k: int) -> ProcessKind:
    return ProcessKind("cre", k)


def num(k: int) -> ProcessKind:
    return ProcessKind("num", k)


TIME = ProcessKind("time", 0)


def all_kinds(n_colors: int) -> list[ProcessKind]:
    out = [TIME]
    for k in range(1, n_colors + 1):
        out += [ann(k), cre(k), num(k)]
    return out


@dataclass(frozen=True)
class Band:
    """The band projection P^[k]."""

    k: int

    def __str__(self) -> str:
        return f"P[{self.k}]"


Projection = Filter | Band


def signed_filters(p: Projection) -> list[tuple[float, Filter]]:
    """Write a projection as a signed sum of filter projections.

    P^[0] = P^(∅) and P^[k] = P^({1..k}) − P^({1..k-1}) for k >= 1.
    """
    if isinstance(p, Filter):
        return [(1.0, p)]
    if p.k == 0:
        return [(1.0, EMPTY)]
    return [(1.0, lower_colors(p.k + 1)), (-1.0, lower_colors(p.k))]


def projection_operator(p: Projection, grid: GridSpec) -> SparseOperator:
    if isinstance(p, Band):
        return band_projection(p.k, grid)
    return color_projection(p, grid)


@dataclass(frozen=True)
class Summand:
    """A CCR process times a projection placed on ``side`` of it."""

    kind: ProcessKind
    proj: Projection
    side: Literal["left", "right"]

    def __str__(self) -> str:
        return f"{self.proj}·{self.kind}" if self.side == "left" else f"{self.kind}·{self.proj}"


@dataclass(frozen=True)
class FilteredKind:
    kind: ProcessKind
    filter: Filter

    @property
    def effective_filter(self) -> Filter:
        if self.kind.sort == "num":
            return self.filter | Filter.of([self.kind.k])
        return self.filter

    @property
    def summand(self) -> Summand:
        side = "left" if self.kind.sort in ("ann", "time") else "right"
        return Summand(self.kind, self.effective_filter, side)

    @property
    def dual(self) -> "FilteredKind":
        return FilteredKind(self.kind.dual, self.filter)


MSort = Literal["ann", "cre", "num", "time"]
INF = None


@dataclass(frozen=True)
class MFreeKind:
    """Extended m-free process index: level m (None for ∞) and sort."""

    m: int | None
    sort: MSort

    def __post_init__(self):
        if self.sort not in _SORTS:
            raise FockError(f"unknown m-free sort {self.sort!r}")
        if self.m is not None and self.m < 1:
            raise FockError("m-free level must be >= 1")

    @property
    def dual(self) -> "MFreeKind":
        swap = {"ann": "cre", "cre": "ann"}
        return MFreeKind(self.m, swap.get(self.sort, self.sort))

    @property
    def token(self) -> str:
        m = "inf" if self.m is None else str(self.m)
        return {"ann": f"l({m})", "cre": f"l*({m})", "num": f"lN({m})", "time": f"lT({m})"}[self.sort]

    def __str__(self) -> str:
        return self.token

    def bounded(self, support: int, n_colors: int) -> "MFreeKind":
        """Replace m = ∞ by a finite level that gives the same operator on
        vectors of color support <= ``support``.

        Creation of color k acts on band k-1, so creation needs k up to
        support + 1; annihilation and number only see colors <= support.
        """
        if self.m is not None:
            return self
        need = support + 1 if self.sort in ("cre", "time") else max(support, 1)
        if need > n_colors and self.sort != "time":
            raise FockError(
                f"∞-level {self.sort} on support {support} needs color {need} > {n_colors}"
            )
        return MFreeKind(max(1, min(need, n_colors + 1 if self.sort == "time" else n_colors)), self.sort)


def expansion(mk: MFreeKind) -> list[Summand]:
    """Summands of an m-free process, e.g. l^(m)* = Σ_k A^(k)* P^[k-1]."""
    if mk.m is None:
        raise FockError("expand an ∞-level process only after bounding it (MFreeKind.bounded)")
    m = mk.m
    if mk.sort == "cre":
        return [Summand(cre(k), Band(k - 1), "right") for k in range(1, m + 1)]
    if mk.sort == "ann":
        return [Summand(ann(k), Band(k - 1), "left") for k in range(1, m + 1)]
    if mk.sort == "num":
        return [Summand(num(k), Band(k), "left") for k in range(1, m + 1)]
    return [Summand(TIME, lower_colors(m), "left")]


def increment(kind: ProcessKind, s: float, t: float, grid: GridSpec) -> SparseOperator:
    """A^η_t − A^η_s, built directly from the cells in [s, t)."""
    j0, j1 = grid.cell_of(s), grid.cell_of(t)
    if j1 < j0:
        raise FockError(f"increment over reversed interval [{s}, {t}]")
    return cell_increment(kind, j0, j1, grid)


@lru_cache(maxsize=1024)
def cell_increment(kind: ProcessKind, j0: int, j1: int, grid: GridSpec) -> SparseOperator:
    """Increment of A^η over the grid cells j0, ..., j1-1."""
    s, t = grid.time(j0), grid.time(j1)
    if kind.sort == "time":
        return identity(grid).scale((j1 - j0) * grid.dt)
    grid.check_color(kind.k)
    if kind.sort == "num":
        return number_in_cells(kind.k, j0, j1, grid)
    f = OneParticleVector.indicator(grid, kind.k, s, t)
    return annihilation(f) if kind.sort == "ann" else creation(f)


def fundamental(kind: ProcessKind, t: float, grid: GridSpec) -> SparseOperator:
    """The CCR process value A^η_t."""
    return increment(kind, 0.0, t, grid)


def summand_increment(sm: Summand, s: float, t: float, grid: GridSpec) -> SparseOperator:
    inc = increment(sm.kind, s, t, grid)
    p = projection_operator(sm.proj, grid)
    return p @ inc if sm.side == "left" else inc @ p


def filtered(fk: FilteredKind, t: float, grid: GridSpec) -> SparseOperator:
    """A^(η,V)_t: A* P^(V), P^(V) A, A∘ P^(V∪{k}) or t P^(V)."""
    fk.filter.validate(grid.n_colors)
    return summand_increment(fk.summand, 0.0, t, grid)


def filtered_increment(fk: FilteredKind, s: float, t: float, grid: GridSpec) -> SparseOperator:
    return summand_increment(fk.summand, s, t, grid)


def mfree(mk: MFreeKind, t: float, grid: GridSpec, support: int | None = None) -> SparseOperator:
    """The extended m-free process l^α_t as a finite sum of projected CCR processes."""
    return mfree_increment(mk, 0.0, t, grid, support)


def mfree_increment(mk: MFreeKind, s: float, t: float, grid: GridSpec,
                    support: int | None = None) -> SparseOperator:
    if mk.m is None:
        if support is None:
            raise FockError("∞-level process needs a color-support bound")
        mk = mk.bounded(support, grid.n_colors)
    if mk.sort != "time" and mk.m > grid.n_colors:
        raise FockError(f"m = {mk.m} exceeds the {grid.n_colors} available colors")
    if mk.sort == "time" and mk.m > grid.n_colors + 1:
        raise FockError(f"m = {mk.m} exceeds the {grid.n_colors} available colors")
    total = None
    for sm in expansion(mk):
        term = summand_increment(sm, s, t, grid)
        total = term if total is None else total + term
    return total


def parse_kind(token: str) -> ProcessKind:
    """Parse ``dA(k)``, ``dA*(k)``, ``dN(k)`` or ``dT``."""
    tok = token.replace(" ", "")
    if tok == "dT":
        return TIME
    for prefix, sort in (("dA*(", "cre"), ("dA(", "ann"), ("dN(", "num")):
        if tok.startswith(prefix) and tok.endswith(")"):
            return ProcessKind(sort, int(tok[len(prefix):-1]))
    raise FockError(f"unknown process token {token!r}")


def parse_mfree(token: str) -> MFreeKind:
    """Parse ``l(m)``, ``l*(m)``, ``lN(m)`` or ``lT(m)`` (m may be ``inf``)."""
    tok = token.replace(" ", "")
    for prefix, sort in (("l*(", "cre"), ("lN(", "num"), ("lT(", "time"), ("l(", "ann")):
        if tok.startswith(prefix) and tok.endswith(")"):
            body = tok[len(prefix):-1]
            return MFreeKind(None if body in ("inf", "∞") else int(body), sort)
    raise FockError(f"unknown m-free token {token!r}")


__all__ = [
    "Band", "FULL", "FilteredKind", "INF", "MFreeKind", "ProcessKind", "Summand", "TIME",
    "all_kinds", "ann", "cre", "expansion", "filtered", "filtered_increment", "fundamental",
    "cell_increment", "increment", "mfree", "mfree_increment", "num", "parse_kind", "parse_mfree",
    "projection_operator", "signed_filters", "summand_increment",
]
