
import numpy as np
import pytest

from filtered_fock.fock import EMPTY, FULL, Filter, FockError, GridSpec, color_projection, initial_operator
from filtered_fock.processes import TIME, Band, MFreeKind, ProcessKind, mfree_increment
from filtered_fock.sde import (
    M_SORTS,
    Coefficient,
    FilterSum,
    MFreeCoefficients,
    SDESystem,
    UnitarityCoefficients,
    _Ops,
    admissible_check,
    adversarial_components,
    closure,
    free_conditions,
    gronwall_bound,
    hp_system,
    independence_condition,
    independence_test,
    isometry_defects,
    m_truncated_conditions,
    mfree_filters,
    mfree_sde_expand,
    picard_solve,
    probe_catalog,
    random_hermitian,
    random_system,
    random_unitary,
    solve_causal,
    stabilization_sweep,
    step_product,
    unitarity_check,
)

SMALL = GridSpec(1.0, 2, 3, 2, 2)


def test_filter_sum_algebra():
    h = 2
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(h, h)), rng.normal(size=(h, h))
    A = FilterSum(h, {Filter.of([1, 2]): a, FULL: b})
    assert np.allclose(A.at_atom(Filter.of([1])), a + b)
    assert np.allclose(A.at_atom(Filter.of([3])), b)
    assert A.norm(3) == pytest.approx(max(np.linalg.norm(a + b, 2), np.linalg.norm(b, 2)))
    Bd = FilterSum.projection(h, Band(2))
    assert np.allclose(Bd.at_atom(Filter.of([1, 2])), np.eye(h))
    assert np.allclose(Bd.at_atom(Filter.of([1])), 0)
    assert np.allclose(Bd.at_atom(Filter.of([1, 2, 3])), 0)


def test_filter_sum_materializes_homomorphically():
    rng = np.random.default_rng(1)
    h = SMALL.h0_dim
    V, W = Filter.of([1]), Filter.of([2, 3])
    A = FilterSum(h, {V: rng.normal(size=(h, h)), FULL: rng.normal(size=(h, h))})
    B = FilterSum(h, {W: rng.normal(size=(h, h)), EMPTY: rng.normal(size=(h, h))})
    lhs = (A @ B).materialize(SMALL).mat
    rhs = (A.materialize(SMALL) @ B.materialize(SMALL)).mat
    assert abs(lhs - rhs).max() < 1e-14
    # the atom norm is the operator norm on the truncated space
    dense = (A + B).materialize(SMALL).dense()
    assert np.linalg.norm(dense, 2) == pytest.approx((A + B).norm(3))


def test_closure_and_validation():
    V, W = Filter.of([1, 2]), Filter.of([2, 3])
    assert set(closure([V, W])) == {V, W, Filter.of([2])}
    g = SMALL
    X = Coefficient.make(g, TIME, V, FULL, np.eye(2))
    with pytest.raises(FockError):
        SDESystem(g, (FULL, W), (X,), {FULL: np.eye(2)})
    with pytest.raises(FockError):
        SDESystem(g, (V, W, FULL), (), {FULL: np.eye(2)})
    sys = SDESystem.build(g, [X, Coefficient.make(g, TIME, W, FULL, np.eye(2))])
    assert Filter.of([2]) in sys.filters and FULL in sys.filters


def test_routes_partition_by_intersection():
    g = SMALL
    V, W = Filter.of([1]), Filter.of([1, 2])
    X = Coefficient.make(g, ProcessKind("cre", 1), W, FULL, np.eye(2))
    sys = SDESystem.build(g, [X], extra_filters=[V])
    for U, pairs in sys.routes.items():
        for Y, E in pairs:
            assert Y.C & Y.D & E == U


def test_zero_coefficients_keep_initial_values():
    g = SMALL
    init = {FULL: np.eye(2), Filter.of([1]): np.array([[0.0, 1.0], [1.0, 0.0]])}
    sys = SDESystem.build(g, [], init)
    probes = probe_catalog(g, n_fixed=3, n_random=3)
    sol, rep = picard_solve(sys, probes)
    assert rep.converged and rep.residual == 0
    for c in range(g.n_cells + 1):
        for V in sys.filters:
            for i, x in enumerate(probes):
                want = sys.initial_value(V).materialize(g).mat @ x.vec
                assert np.abs(sol.component(i, V, c) - want).max() == 0


def test_scalar_exponential():
    g = GridSpec(1.0, 4, 1, 2, 1)
    c = 0.7 + 0.3j
    sys = SDESystem.build(g, [Coefficient.make(g, TIME, FULL, FULL, [[c]])])
    probes = probe_catalog(g, n_fixed=4, n_random=4)
    sol, rep = picard_solve(sys, probes)
    assert rep.converged and rep.violations == 0
    for j in range(g.n_cells + 1):
        t = g.time(j)
        for i, x in enumerate(probes):
            assert np.abs(sol.value(i, j) - np.exp(c * t) * x.vec).max() < 1e-10
            # the Gronwall envelope for |I(t)x| ≤ |x| + |c|∫|I x|
            assert np.linalg.norm(sol.value(i, j)) <= gronwall_bound(abs(c), np.linalg.norm(x.vec), t) * (1 + 1e-12)


def test_causal_solve_matches_picard():
    rng = np.random.default_rng(2)
    g = GridSpec(1.0, 4, 2, 2, 2)
    sys = random_system(g, rng)
    probes = probe_catalog(g, n_fixed=4, n_random=4)
    sol, rep = picard_solve(sys, probes)
    assert rep.converged and rep.ok
    assert rep.residual <= 10 * 1e-9
    causal = solve_causal(sys, probes)
    assert np.abs(sol.values() - causal.values()).max() < 1e-9


def test_uniqueness_from_perturbed_start():
    rng = np.random.default_rng(3)
    g = GridSpec(1.0, 4, 2, 2, 2)
    sys = random_system(g, rng)
    probes = probe_catalog(g, n_fixed=4, n_random=4)
    sol, _ = picard_solve(sys, probes)
    start = {V: sys.initial_value(V) + FilterSum.of(random_hermitian(2, rng), V) for V in sys.filters}
    other, rep = picard_solve(sys, probes, start=start)
    assert rep.converged
    # the difference solves the homogeneous equation, so Gronwall forces it to 0
    assert np.abs(sol.values() - other.values()).max() <= 1e-9


def test_bound_violation_is_fatal(monkeypatch):
    import filtered_fock.sde as sde

    rng = np.random.default_rng(4)
    g = GridSpec(1.0, 4, 2, 2, 2)
    sys = random_system(g, rng)
    probes = probe_catalog(g, n_fixed=2, n_random=2)
    real = sde._bound_table
    monkeypatch.setattr(sde, "_bound_table", lambda *a: real(*a) * 1e-30)
    with pytest.raises(FockError):
        picard_solve(sys, probes)


def test_hp_generator_matches_step_product():
    rng = np.random.default_rng(5)
    g = GridSpec(1.0, 8, 1, 3, 2)
    sys = hp_system(g, random_hermitian(2, rng), [0.5 * random_hermitian(2, rng)], [random_unitary(2, rng)])
    probes = probe_catalog(g, n_fixed=3, n_random=3)
    row = isometry_defects(sys, probes)
    assert row.picard_vs_product < 1e-12
    X = np.stack([x.vec for x in probes], axis=1)
    assert np.abs(step_product(sys, X) - solve_causal(sys, probes).values()).max() < 1e-12


def test_unitarity_examples():
    rng = np.random.default_rng(6)
    g = GridSpec(1.0, 4, 2, 2, 2)
    H = random_hermitian(2, rng)
    L = [0.5 * random_hermitian(2, rng), random_hermitian(2, rng)]
    S = [random_unitary(2, rng), random_unitary(2, rng)]
    rep = unitarity_check(UnitarityCoefficients(hp_system(g, H, L, S)))
    assert rep.ok and max(r.residual for r in rep.rows) < 1e-12
    assert unitarity_check(UnitarityCoefficients(SDESystem.build(g, []))).ok
    bad = hp_system(g, H, L, S)
    extra = Coefficient.make(g, ProcessKind("ann", 1), FULL, FULL, L[0])
    broken = SDESystem.build(g, list(bad.coefficients) + [extra])
    assert "(ii) k=1" in unitarity_check(UnitarityCoefficients(broken)).failing()


def test_scalar_phase_evolution_is_unitary():
    g = GridSpec(1.0, 4, 1, 2, 1)
    lam = 2.0
    sys = SDESystem.build(g, [Coefficient.make(g, TIME, FULL, FULL, [[1j * lam]])])
    probes = probe_catalog(g, n_fixed=4, n_random=4)
    row = isometry_defects(sys, probes)
    assert row.isometry < 1e-12 and row.coisometry < 1e-12


def test_admissible_examples():
    assert admissible_check([FULL])
    assert admissible_check(list(mfree_filters(3)))
    assert not admissible_check([EMPTY, Filter.of([2]), Filter.of([1, 2])])
    assert not admissible_check([Filter.of([1]), Filter.of([1]), FULL])


def test_independence_examples():
    g = GridSpec(1.0, 4, 3, 2, 1)
    A, B = Filter.of([1]), Filter.of([1, 2])
    zero = initial_operator(g, np.zeros((1, 1)))
    assert independence_test({A: zero, B: zero}, [A, B], 0.5, g).all_vanish
    Y = initial_operator(g, np.eye(1)) @ color_projection(A, g)
    rep = independence_test({A: Y, B: Y.scale(-1.0)}, [A, B], 0.5, g)
    assert rep.applicable and not rep.all_vanish and rep.witness is not None
    assert independence_condition(list(mfree_filters(2)))
    assert not independence_condition([B, A])
    assert not independence_test({A: zero, B: zero}, [B, A], 0.5, g).applicable


def test_adversarial_independence_small_batch():
    g = GridSpec(1.0, 4, 3, 2, 1)
    rng = np.random.default_rng(7)
    for i in range(15):
        comps, order, planted = adversarial_components(g, 0.5, rng)
        rep = independence_test(comps, order, 0.5, g, seed=i)
        assert rep.applicable and not rep.all_vanish


def _mfree_coeffs(rng, h, filters, scale=0.3):
    def rs():
        return FilterSum(h, {V: scale * rng.normal(size=(h, h)) for V in filters})
    return MFreeCoefficients({s: rs() for s in M_SORTS}, {s: rs() for s in M_SORTS})


def test_expansion_term_counts():
    rng = np.random.default_rng(8)
    co = _mfree_coeffs(rng, 1, [FULL])
    e = mfree_sde_expand(co, 2, GridSpec(1.0, 2, 3, 2, 1))
    assert e.eta_terms == 2 + 2 + 2 + 1
    assert set(mfree_filters(2)) <= set(e.system.filters)
    with pytest.raises(FockError):
        mfree_sde_expand(co, 4, GridSpec(1.0, 2, 3, 2, 1))


def test_boolean_expansion_uses_vacuum_bands():
    rng = np.random.default_rng(9)
    co = _mfree_coeffs(rng, 1, [FULL])
    sys = mfree_sde_expand(co, 1, GridSpec(1.0, 2, 3, 2, 1)).system
    for X in sys.coefficients:
        if X.kind.sort in ("cre", "ann", "time"):
            assert EMPTY in (X.C, X.D)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_expansion_reproduces_mfree_differentials(m):
    rng = np.random.default_rng(10 + m)
    g = GridSpec(1.0, 2, 3, 2, 2)
    co = _mfree_coeffs(rng, 2, [FULL, Filter.of([1]), Filter.of([1, 2])])
    sys = mfree_sde_expand(co, m, g).system
    ops = _Ops(sys)
    for c in range(g.n_cells):
        s, t = g.time(c), g.time(c + 1)
        want = None
        for sort in M_SORTS:
            F, G = co.get(sort)
            inc = mfree_increment(MFreeKind(m, sort), s, t, g)
            term = F.materialize(g) @ inc @ G.materialize(g)
            want = term if want is None else want + term
        got = None
        for X in sys.coefficients:
            op = ops.time(X, c).scale(g.dt) if X.kind == TIME else ops.noise(X, c)
            got = op if got is None else got + op
        assert abs(got.mat - want.mat).max() < 1e-13


def test_stabilization_small():
    rng = np.random.default_rng(11)
    g = GridSpec(1.0, 2, 4, 2, 1)
    co = _mfree_coeffs(rng, 1, [EMPTY, Filter.of([1])])
    probes = probe_catalog(g, n_fixed=3, n_random=3)
    rep = stabilization_sweep(co, g, [1, 2, 3, 4], probes)
    assert rep.stabilized and rep.m_star <= 2
    zero = MFreeCoefficients({s: FilterSum.zero(1) for s in M_SORTS}, {s: FilterSum.zero(1) for s in M_SORTS})
    assert stabilization_sweep(zero, g, [1, 2, 3], probes).m_star == 1


def _unitary_mfree(rng, h, satisfied):
    V = Filter.of([1, 2])
    Gb = rng.normal(size=(h, h)) + 1j * rng.normal(size=(h, h))
    Gb *= 0.5 / np.linalg.norm(Gb, 2)
    H = random_hermitian(h, rng)
    G2 = FilterSum.of(Gb, V)
    F1 = G2.H.scale(-1) if satisfied else FilterSum.of(random_hermitian(h, rng), V)
    F4 = FilterSum.of(-(1j * H + 0.5 * Gb.conj().T @ Gb), V)
    one, zero = FilterSum.identity(h), FilterSum.zero(h)
    return MFreeCoefficients({"ann": F1, "cre": one, "num": zero, "time": F4},
                             {"ann": one, "cre": G2, "num": zero, "time": one})


@pytest.mark.parametrize("satisfied", [True, False])
def test_m_truncated_conditions_match_general_ones(satisfied):
    rng = np.random.default_rng(12)
    g = GridSpec(1.0, 2, 4, 2, 2)
    co = _unitary_mfree(rng, 2, satisfied)
    for m in (1, 2, 3, 4):
        rep = unitarity_check(UnitarityCoefficients(mfree_sde_expand(co, m, g).system), cells=[0])
        trunc = m_truncated_conditions(co, m, g.n_colors)
        lin = max(rep.worst(f"(ii) k={k}") for k in range(1, m + 1))
        assert abs(lin - trunc["linear"]) <= 1e-10
        assert abs(rep.worst("(iii)") - trunc["quadratic"]) <= 1e-10
        assert rep.worst("(i)") <= 1e-10
    assert (free_conditions(co, 4)["linear"] <= 1e-10) == satisfied
