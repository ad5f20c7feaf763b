"""Itô products: the boson table, filtered corrections, and the m-free calculus.

Conventions: ``X1`` always stores ``G1 ⊗ F1`` (so ``X1.D`` is E1 and ``X1.E``
is D1) and integrates to ``I1 = Σ G1 ΔA F1``; ``X2`` stores ``F2 ⊗ G2`` with
filters (D2, E2).  Product formulas are checked through matrix elements
between exponential states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .biprocess import Biprocess, SimpleBiprocess, as_biprocess, rewrite_for_summand
from .fock import (
    FULL,
    ZERO_BOUND,
    ExpState,
    Filter,
    FockError,
    GridSpec,
    OpBound,
    SparseOperator,
    band_projection,
    color_projection,
    lower_colors,
    zero,
)
from .integrate import (
    IntegralResult,
    integral_apply,
    integral_bound,
    integral_defining_sum,
    mu,
    multiplier,
    running_apply,
    running_bounds,
)
from .processes import (
    TIME,
    Band,
    MFreeKind,
    ProcessKind,
    expansion,
    fundamental,
    mfree,
    signed_filters,
)

Trace = Literal["IP0", "IP1"]


@dataclass(frozen=True)
class ItoProduct:
    """Result of dA^{η1} dA^{η2} (or dl^{α1} dl^{α2}); ``result`` None means zero."""

    result: ProcessKind | MFreeKind | None
    trace: Trace | None = None

    @property
    def is_zero(self) -> bool:
        return self.result is None


_BOSON = {("ann", "cre"): "time", ("ann", "num"): "ann", ("num", "cre"): "cre", ("num", "num"): "num"}


def boson_table(k1: ProcessKind, k2: ProcessKind) -> ItoProduct:
    """dA^{η1} dA^{η2} for CCR differentials (same color required)."""
    out = _BOSON.get((k1.sort, k2.sort))
    if out is None or k1.k != k2.k:
        return ItoProduct(None)
    return ItoProduct(TIME if out == "time" else ProcessKind(out, k1.k))


# Partial-trace tags follow where H sits between the two differentials: H sees
# the state before a creation (bands k-1, vacuum included) and after a number
# count (bands k).  At ((m),(m)∘) both tags give the same operator because
# annihilation kills the vacuum band.
_MFREE = {("ann", "cre"): ("time", "IP0"), ("ann", "num"): ("ann", "IP1"),
          ("num", "cre"): ("cre", "IP0"), ("num", "num"): ("num", "IP1")}

# Tags as commonly displayed for this table; ((m)∘,(m)*) carries IP1 there,
# which drops the vacuum band and fails the numerical check.
DISPLAYED_TRACE = {("ann", "cre"): "IP0", ("ann", "num"): "IP1",
                   ("num", "cre"): "IP1", ("num", "num"): "IP1"}


def mfree_table(a1: MFreeKind, a2: MFreeKind, m: int | None = None) -> ItoProduct:
    """dl^{α1} dl^{α2} at a common level m, with its partial-trace tag."""
    if a1.m != a2.m or (m is not None and a1.m != m):
        raise FockError("m-free products need a common level m")
    out = _MFREE.get((a1.sort, a2.sort))
    if out is None:
        return ItoProduct(None)
    return ItoProduct(MFreeKind(a1.m, out[0]), out[1])


# --------------------------------------------------------------------------
# Cellwise helpers
# --------------------------------------------------------------------------


def _cell_biprocess(grid: GridSpec, end_cell: int, left, right, D: Filter, E: Filter,
                    label: str = "") -> SimpleBiprocess:
    times = tuple(grid.time(j) for j in range(end_cell + 1))
    return SimpleBiprocess(grid, times, tuple(left), tuple(right), D, E, label)


def _common_end(*Xs: SimpleBiprocess) -> int:
    return min(X.grid.cell_of(X.end) for X in Xs)


# --------------------------------------------------------------------------
# Filtered Itô correction
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ItoCorrection:
    kind: ProcessKind | None
    rho: int
    right_placement: SimpleBiprocess | None  # G1 ⊗ ρ F1F2 G2
    left_placement: SimpleBiprocess | None   # G1 ρ F1F2 ⊗ G2


def ito_correction(X1: SimpleBiprocess, k1: ProcessKind, X2: SimpleBiprocess,
                   k2: ProcessKind) -> ItoCorrection:
    """dI1 dI2 = G1 ⊗ ρ(F1F2) G2 # d[[A^{η1}, A^{η2}]], ρ = 1_{D1∩D2}(k1)."""
    prod = boson_table(k1, k2)
    E1, D1, D2, E2 = X1.D, X1.E, X2.D, X2.E
    if prod.is_zero:
        return ItoCorrection(None, 0, None, None)
    rho = int(k1.k in D1 and k1.k in D2)
    g = X1.grid
    n = _common_end(X1, X2)
    G1s, mids, G2s = [], [], []
    for c in range(n):
        G1, F1 = X1.value_at_cell(c)
        F2, G2 = X2.value_at_cell(c)
        G1s.append(G1)
        mids.append((F1 @ F2).scale(rho))
        G2s.append(G2)
    right = _cell_biprocess(g, n, G1s, [M @ G for M, G in zip(mids, G2s)], E1, D1 & D2 & E2,
                            "G1⊗ρ(F1F2)G2")
    left = _cell_biprocess(g, n, [G @ M for G, M in zip(G1s, mids)], G2s, E1 & D1 & D2, E2,
                           "G1ρ(F1F2)⊗G2")
    return ItoCorrection(prod.result, rho, right, left)


def placements_residual(corr: ItoCorrection, t: float) -> float:
    """max |entry| of the difference between the two placements' integrals."""
    if corr.kind is None:
        return 0.0
    a = integral_defining_sum(corr.right_placement, corr.kind, t).operator
    b = integral_defining_sum(corr.left_placement, corr.kind, t).operator
    d = (a.mat - b.mat)
    return float(abs(d).max()) if d.nnz else 0.0


@dataclass(frozen=True)
class ItoFormulaRow:
    t: float
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


def _values(X: SimpleBiprocess, c: int) -> SparseOperator:
    A, B = X.value_at_cell(c)
    return A @ B


def verify_ito_formula(x: ExpState, X1: SimpleBiprocess, k1: ProcessKind, X2: SimpleBiprocess,
                       k2: ProcessKind, y: ExpState) -> list[ItoFormulaRow]:
    """⟨x, I1 I2 y⟩ against the three integrals of the filtered Itô formula at every grid time."""
    g = x.grid
    E1, D1, D2, E2 = X1.D, X1.E, X2.D, X2.E
    u, v = x.u, y.u
    I1adj = running_apply(X1, k1, x.vec, adjoint=True)
    I2y = running_apply(X2, k2, y.vec)
    b1, b2 = running_bounds(X1, k1), running_bounds(X2, k2)
    m_lead = mu(k2, u, v).masses * multiplier(k2, E1 & D1 & D2, E2)
    m_trail = mu(k1, u, v).masses * multiplier(k1, E1, D1 & D2 & E2)
    corr = ito_correction(X1, k1, X2, k2)
    if corr.kind is not None:
        m_corr = mu(corr.kind, u, v).masses * multiplier(corr.kind, E1, D1 & D2 & E2) * corr.rho
    else:
        m_corr = np.zeros(g.n_cells)
    rows = []
    s1 = s2 = s3 = 0j
    tau_acc = 0.0
    for c in range(g.n_cells + 1):
        t = g.time(c)
        lhs = complex(np.vdot(I1adj[c], I2y[c]))
        tau = tau_acc + (b1[c] @ b2[c]).tail_between(x, y)
        rows.append(ItoFormulaRow(t, lhs, (complex(s1), complex(s2), complex(s3)), tau))
        if c == g.n_cells:
            break
        G1, F1 = X1.value_at_cell(c)
        F2, G2 = X2.value_at_cell(c)
        B2, B1 = F2 @ G2, G1 @ F1
        if m_lead[c] != 0:
            B2y = B2.mat @ y.vec
            s1 += m_lead[c] * 0.5 * (np.vdot(I1adj[c], B2y) + np.vdot(I1adj[c + 1], B2y))
            tau_acc += abs(m_lead[c]) * 0.5 * ((b1[c] @ B2.bound).tail_between(x, y)
                                               + (b1[c + 1] @ B2.bound).tail_between(x, y))
        if m_trail[c] != 0:
            B1x = B1.mat.conj().T @ x.vec
            s2 += m_trail[c] * 0.5 * (np.vdot(B1x, I2y[c]) + np.vdot(B1x, I2y[c + 1]))
            tau_acc += abs(m_trail[c]) * 0.5 * ((B1.bound @ b2[c]).tail_between(x, y)
                                                + (B1.bound @ b2[c + 1]).tail_between(x, y))
        if m_corr[c] != 0:
            W = G1 @ F1 @ F2 @ G2
            s3 += m_corr[c] * np.vdot(x.vec, W.mat @ y.vec)
            tau_acc += abs(m_corr[c]) * W.bound.tail_between(x, y)
    return rows


# --------------------------------------------------------------------------
# m-free integrals
# --------------------------------------------------------------------------


def _bounded(alpha: MFreeKind, grid: GridSpec, support: int | None) -> MFreeKind:
    if alpha.m is None:
        if support is None:
            raise FockError("∞-level integrator needs a color-support bound")
        return alpha.bounded(support, grid.n_colors)
    return alpha


def _check_level(alpha: MFreeKind, grid: GridSpec) -> None:
    limit = grid.n_colors + 1 if alpha.sort == "time" else grid.n_colors
    if alpha.m > limit:
        raise FockError(f"m = {alpha.m} exceeds the {grid.n_colors} available colors")


def mfree_terms(X: SimpleBiprocess | Biprocess, alpha: MFreeKind,
                support: int | None = None) -> list[tuple[SimpleBiprocess, ProcessKind]]:
    """CCR integrands (X[η,V], η) summing to ∫X # dl^α."""
    Xb = as_biprocess(X)
    grid = Xb.terms[0].grid
    alpha = _bounded(alpha, grid, support)
    _check_level(alpha, grid)
    out = []
    for sm in expansion(alpha):
        for T in rewrite_for_summand(Xb, sm).terms:
            out.append((T, sm.kind))
    return out


def mfree_integral(X: SimpleBiprocess | Biprocess, alpha: MFreeKind, t: float,
                   support: int | None = None) -> IntegralResult:
    """∫_0^t X # dl^α as a sum of rewritten CCR integrals."""
    terms = mfree_terms(X, alpha, support)
    grid = terms[0][0].grid
    total, bound = zero(grid), ZERO_BOUND
    for T, kind in terms:
        r = integral_defining_sum(T, kind, t)
        total = total + r.operator
        bound = bound + r.bound
    flt = as_biprocess(X).terms[0].D & as_biprocess(X).terms[0].E
    return IntegralResult(total, "defining-sum", flt, bound)


def mfree_apply(X, alpha: MFreeKind, t: float, vec: np.ndarray, support: int | None = None) -> np.ndarray:
    out = np.zeros_like(vec, dtype=complex)
    for T, kind in mfree_terms(X, alpha, support):
        out += integral_apply(T, kind, t, vec)
    return out


def mfree_bound(X, alpha: MFreeKind, t: float, support: int | None = None) -> OpBound:
    b = ZERO_BOUND
    for T, kind in mfree_terms(X, alpha, support):
        b = b + integral_bound(T, kind, t)
    return b


def nu_hat_terms(alpha: MFreeKind, D: Filter, E: Filter, n_colors: int,
                 number_band: bool = False) -> list[tuple[ProcessKind, SparseOperator | Band | Filter]]:
    """(η, pairing projection) pairs of the measure ν̂^α.

    Number pairs with the filter {1..k}; ``number_band=True`` gives the band
    P^[k] instead, for comparison.
    """
    m = alpha.m
    Dm = [k for k in range(1, min(m, n_colors) + 1) if k in D]
    Em = [k for k in range(1, min(m, n_colors) + 1) if k in E]
    if alpha.sort == "ann":
        return [(ProcessKind("ann", k), Band(k - 1)) for k in Em]
    if alpha.sort == "cre":
        return [(ProcessKind("cre", k), Band(k - 1)) for k in Dm]
    if alpha.sort == "num":
        return [(ProcessKind("num", k), Band(k) if number_band else lower_colors(k + 1))
                for k in Dm if k in Em]
    return [(TIME, lower_colors(m))]


def _proj_op(p, grid):
    return band_projection(p.k, grid) if isinstance(p, Band) else color_projection(p, grid)


def mfree_matrix_element(x: ExpState, X: SimpleBiprocess, alpha: MFreeKind, t: float,
                         y: ExpState, support: int | None = None,
                         number_band: bool = False) -> tuple[complex, float]:
    """⟨x, ∫X # dl^α y⟩ = ∫ ⟨x, F(s) Q G(s) y⟩ dν̂^α, with its truncation tail."""
    g = x.grid
    alpha = _bounded(alpha, g, support)
    _check_level(alpha, g)
    total, tau = 0j, 0.0
    for kind, p in nu_hat_terms(alpha, X.D, X.E, g.n_colors, number_band):
        Q = _proj_op(p, g)
        masses = mu(kind, x.u, y.u).masses
        for a, b, F, G in X.pieces(t):
            w = complex(masses[a:b].sum())
            if w == 0:
                continue
            W = F @ Q @ G
            total += w * complex(np.vdot(x.vec, W.mat @ y.vec))
            tau += abs(w) * W.bound.tail_between(x, y)
    return total, tau


# --------------------------------------------------------------------------
# m-free Itô table by symbolic contraction
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FilteredDifferential:
    """coef · P^(left) dA^η P^(right)."""

    coef: float
    left: Filter
    kind: ProcessKind
    right: Filter


def expand_differential(alpha: MFreeKind) -> list[FilteredDifferential]:
    out = []
    for sm in expansion(alpha):
        for c, W in signed_filters(sm.proj):
            if sm.side == "left":
                out.append(FilteredDifferential(c, W, sm.kind, FULL))
            else:
                out.append(FilteredDifferential(c, FULL, sm.kind, W))
    return out


def contract(d1: FilteredDifferential, d2: FilteredDifferential) -> FilteredDifferential | None:
    """dA^{η1} P^(V) dA^{η2} = 1_V(k) d[[η1,η2]] P^(V) on exponential domains."""
    prod = boson_table(d1.kind, d2.kind)
    if prod.is_zero:
        return None
    V = d1.right & d2.left
    if d1.kind.k not in V:
        return None
    return FilteredDifferential(d1.coef * d2.coef, d1.left, prod.result, V & d2.right)


def product_differentials(a1: MFreeKind, a2: MFreeKind) -> list[FilteredDifferential]:
    out = []
    for d1 in expand_differential(a1):
        for d2 in expand_differential(a2):
            r = contract(d1, d2)
            if r is not None:
                out.append(r)
    return out


def materialize(diffs: Sequence[FilteredDifferential], t: float, grid: GridSpec) -> SparseOperator:
    total = zero(grid)
    for d in diffs:
        op = color_projection(d.left, grid) @ fundamental(d.kind, t, grid) @ color_projection(d.right, grid)
        total = total + op.scale(d.coef)
    return total


@dataclass(frozen=True)
class TableCheck:
    a1: MFreeKind
    a2: MFreeKind
    expected: ItoProduct
    n_terms: int
    residual: float

    @property
    def ok(self) -> bool:
        return self.residual <= 1e-12


def verify_mfree_cell(a1: MFreeKind, a2: MFreeKind, grid: GridSpec, t: float | None = None) -> TableCheck:
    """Expand dl^{α1} dl^{α2} into filtered differentials and compare with the table."""
    t = grid.horizon if t is None else t
    diffs = product_differentials(a1, a2)
    got = materialize(diffs, t, grid)
    expected = mfree_table(a1, a2)
    target = zero(grid) if expected.is_zero else mfree(expected.result, t, grid)
    d = got.mat - target.mat
    res = float(abs(d).max()) if d.nnz else 0.0
    return TableCheck(a1, a2, expected, len(diffs), res)


# --------------------------------------------------------------------------
# Partial traces and the m-free Itô formula
# --------------------------------------------------------------------------


def trace_bands(V: Filter, which: Trace, n_colors: int) -> list[int]:
    """Bands j entering IP(H): j = k-1 (IP0) or k (IP1) for k ∈ V."""
    top = n_colors + 1 if which == "IP0" else n_colors
    ks = [k for k in range(1, top + 1) if k in V]
    return [k - 1 if which == "IP0" else k for k in ks]


def partial_trace(H: SparseOperator, V: Filter, which: Trace) -> SparseOperator:
    """IP0(H) = Σ_{k∈V} P^[k-1] H P^[k-1]; IP1 uses P^[k]."""
    g = H.grid
    total = zero(g)
    for j in trace_bands(V, which, g.n_colors):
        P = band_projection(j, g)
        total = total + P @ H @ P
    return total


def partial_trace_terms(V: Filter, which: Trace, n_colors: int) -> list[tuple[float, Filter, Filter]]:
    """IP(H) = Σ c · P^(W_l) H P^(W_r) with plain filters."""
    out = []
    for j in trace_bands(V, which, n_colors):
        for c1, W1 in signed_filters(Band(j)):
            for c2, W2 in signed_filters(Band(j)):
                out.append((c1 * c2, W1, W2))
    return out


def mfree_correction(X1: SimpleBiprocess, a1: MFreeKind, X2: SimpleBiprocess, a2: MFreeKind,
                     trace: Trace | None = None) -> tuple[MFreeKind | None, Biprocess | None]:
    """G1 ⊗ IP(F1F2) G2 with the integrator of the m-free table (``trace`` overrides the tag)."""
    prod = mfree_table(a1, a2)
    if prod.is_zero:
        return None, None
    which = trace or prod.trace
    E1, D1, D2, E2 = X1.D, X1.E, X2.D, X2.E
    V = D1 & D2
    g = X1.grid
    n = _common_end(X1, X2)
    terms = []
    for coef, Wl, Wr in partial_trace_terms(V, which, g.n_colors):
        Pl, Pr = color_projection(Wl, g), color_projection(Wr, g)
        lefts, rights = [], []
        for c in range(n):
            G1, F1 = X1.value_at_cell(c)
            F2, G2 = X2.value_at_cell(c)
            lefts.append(G1.scale(coef))
            rights.append(Pl @ F1 @ F2 @ Pr @ G2)
        terms.append(_cell_biprocess(g, n, lefts, rights, E1, Wl & V & Wr & E2, f"IP{which}"))
    return prod.result, Biprocess(tuple(terms))


@dataclass(frozen=True)
class MFreeItoRow:
    t: float
    remainder: complex
    closed_form: complex
    tau: float

    @property
    def diff(self) -> float:
        return abs(self.remainder - self.closed_form)

    @property
    def ok(self) -> bool:
        return self.diff <= self.tau


def verify_mfree_ito(x: ExpState, X1: SimpleBiprocess, a1: MFreeKind, X2: SimpleBiprocess,
                     a2: MFreeKind, y: ExpState, trace: Trace | None = None) -> list[MFreeItoRow]:
    """Compare ⟨x, J1J2 y⟩ minus both Leibniz integrals with the partial-trace correction.

    The closed form assumes F1 F2 commutes with the band projections; past
    operators that move particles between colors violate this.
    """
    g = x.grid
    u, v = x.u, y.u
    terms1 = mfree_terms(X1, a1)
    terms2 = mfree_terms(X2, a2)
    runs1 = [running_apply(T, k, x.vec, adjoint=True) for T, k in terms1]
    runs2 = [running_apply(T, k, y.vec) for T, k in terms2]
    bnd1 = [running_bounds(T, k) for T, k in terms1]
    bnd2 = [running_bounds(T, k) for T, k in terms2]
    n = g.n_cells
    J1x = [sum(r[c] for r in runs1) for c in range(n + 1)]
    J2y = [sum(r[c] for r in runs2) for c in range(n + 1)]
    J1b = [sum((b[c] for b in bnd1), ZERO_BOUND) for c in range(n + 1)]
    J2b = [sum((b[c] for b in bnd2), ZERO_BOUND) for c in range(n + 1)]

    kind3, X3 = mfree_correction(X1, a1, X2, a2, trace)
    masses = {k: mu(k, u, v).masses for k in {k for _, k in terms1} | {k for _, k in terms2}}
    lead = np.zeros(n, dtype=complex)
    trail = np.zeros(n, dtype=complex)
    tau_cell = np.zeros(n)
    for c in range(n):
        for (Ti, ki), run_i, b_i in zip(terms1, runs1, bnd1):
            Vi = Ti.D & Ti.E
            for (Tj, kj), run_j, b_j in zip(terms2, runs2, bnd2):
                Vj = Tj.D & Tj.E
                # J1_i(s) F2' ⊗ G2' # dA^{kj}
                w = masses[kj][c] * multiplier(kj, Vi & Tj.D, Tj.E)
                if w != 0:
                    B = _values(Tj, c)
                    By = B.mat @ y.vec
                    lead[c] += w * 0.5 * (np.vdot(run_i[c], By) + np.vdot(run_i[c + 1], By))
                    tau_cell[c] += abs(w) * 0.5 * ((b_i[c] @ B.bound).tail_between(x, y)
                                                   + (b_i[c + 1] @ B.bound).tail_between(x, y))
                # G1' ⊗ F1' J2_j(s) # dA^{ki}
                w = masses[ki][c] * multiplier(ki, Ti.D, Ti.E & Vj)
                if w != 0:
                    B = _values(Ti, c)
                    Bx = B.mat.conj().T @ x.vec
                    trail[c] += w * 0.5 * (np.vdot(Bx, run_j[c]) + np.vdot(Bx, run_j[c + 1]))
                    tau_cell[c] += abs(w) * 0.5 * ((B.bound @ b_j[c]).tail_between(x, y)
                                                   + (B.bound @ b_j[c + 1]).tail_between(x, y))
    if kind3 is None or not X3.terms:
        closed_y = [np.zeros_like(y.vec)] * (n + 1)
        closed_b = [ZERO_BOUND] * (n + 1)
    else:
        terms3 = mfree_terms(X3, kind3)
        runs3 = [running_apply(T, k, y.vec) for T, k in terms3]
        bnd3 = [running_bounds(T, k) for T, k in terms3]
        closed_y = [sum(r[c] for r in runs3) for c in range(n + 1)]
        closed_b = [sum((b[c] for b in bnd3), ZERO_BOUND) for c in range(n + 1)]
    rows = []
    for c in range(n + 1):
        t = g.time(c)
        lhs = complex(np.vdot(J1x[c], J2y[c]))
        rem = lhs - complex(lead[:c].sum()) - complex(trail[:c].sum())
        tau = ((J1b[c] @ J2b[c]).tail_between(x, y) + float(tau_cell[:c].sum())
               + closed_b[c].tail_between(x, y))
        closed = complex(np.vdot(x.vec, closed_y[c]))
        rows.append(MFreeItoRow(t, rem, closed, tau))
    return rows


__all__ = [
    "DISPLAYED_TRACE", "FilteredDifferential", "ItoCorrection", "ItoFormulaRow", "ItoProduct", "MFreeItoRow",
    "TableCheck", "boson_table", "contract", "expand_differential", "ito_correction",
    "materialize", "mfree_apply", "mfree_bound", "mfree_correction", "mfree_integral",
    "mfree_matrix_element", "mfree_table", "mfree_terms", "nu_hat_terms", "partial_trace",
    "partial_trace_terms", "placements_residual", "product_differentials", "trace_bands",
    "verify_ito_formula", "verify_mfree_cell", "verify_mfree_ito",
]
