import numpy as np
import pytest

from filtered_fock.biprocess import (
    Biprocess,
    SimpleBiprocess,
    ampliation,
    biprocess_product,
    check_adaptedness,
    minimal_filter,
    random_filter,
    random_simple_biprocess,
    rewrite_filtered_integrand,
)
from filtered_fock.fock import EMPTY, FULL, Filter, FockError, color_projection, identity
from filtered_fock.integrate import integral_defining_sum
from filtered_fock.processes import TIME, FilteredKind, all_kinds, ann, cre, filtered, filtered_increment, fundamental, num

from support import DEFAULT_GRID, random_state

G = DEFAULT_GRID


def test_filtered_creation_is_adapted_after_its_time():
    V = Filter.of([1, 3])
    H = filtered(FilteredKind(cre(2), V), 0.25, G)
    for t in (0.25, 0.5, 1.0):
        assert check_adaptedness(H, t, V).ok


def test_future_creation_is_not_adapted():
    H = fundamental(cre(1), 1.0, G)
    rep = check_adaptedness(H, 0.5, FULL)
    assert not rep.ok and rep.witness


def test_scalar_identity_is_adapted_everywhere():
    H = identity(G).scale(2.5)
    for j in range(9):
        assert check_adaptedness(H, G.time(j), FULL).ok
    assert minimal_filter(H, 0.5) == FULL


@pytest.mark.parametrize("V", [EMPTY, Filter.of([1]), Filter.of([2, 3]), Filter.of([1, 2])])
def test_minimal_filter_of_ampliation(V):
    rng = np.random.default_rng(0)
    op = ampliation(G, 0.5, rng.normal(size=(2, 2)), None, V)
    assert minimal_filter(op, 0.5) == V


def test_random_biprocess_is_adapted_on_each_piece():
    rng = np.random.default_rng(1)
    for _ in range(6):
        D, E = random_filter(G, rng), random_filter(G, rng)
        X = random_simple_biprocess(G, rng, D, E)
        for t in X.times[:-1]:
            assert check_adaptedness(X, t, D, E).ok
        p, q = X.color_bounds()
        assert 0 <= p <= 3 and 0 <= q <= 3


def test_partition_validation():
    I = identity(G)
    with pytest.raises(FockError):
        SimpleBiprocess(G, (0.25, 1.0), (I,), (I,))
    with pytest.raises(FockError):
        SimpleBiprocess(G, (0.0, 0.5, 0.5), (I, I), (I, I))
    with pytest.raises(FockError):
        SimpleBiprocess(G, (0.0, 1.0), (I, I), (I,))


def test_rewrite_creation_of_identity():
    V = Filter.of([2])
    (T,) = rewrite_filtered_integrand(SimpleBiprocess.identity(G), cre(1), V).terms
    assert T.D == FULL and T.E == V
    assert abs(T.right[0].mat - color_projection(V, G).mat).max() == 0
    assert abs(T.left[0].mat - identity(G).mat).max() == 0


def test_rewrite_number_adds_own_color():
    (T,) = rewrite_filtered_integrand(SimpleBiprocess.identity(G), num(3), EMPTY).terms
    assert T.D == Filter.of([3]) and T.E == FULL


def _direct_filtered_integral(X, kind, V, t):
    total = None
    for a, b, F, Gv in X.pieces(t):
        term = F @ filtered_increment(FilteredKind(kind, V), G.time(a), G.time(b), G) @ Gv
        total = term if total is None else total + term
    return total


def test_rewrite_preserves_matrix_elements():
    rng = np.random.default_rng(2)
    kinds = all_kinds(3)
    worst = 0.0
    for _ in range(20):
        D, E, V = (random_filter(G, rng) for _ in range(3))
        kind = kinds[int(rng.integers(len(kinds)))]
        X = random_simple_biprocess(G, rng, D, E)
        t = G.time(int(rng.integers(1, 9)))
        x, y = random_state(G, rng), random_state(G, rng)
        lhs = _direct_filtered_integral(X, kind, V, t)
        rhs = None
        for T in rewrite_filtered_integrand(X, kind, V).terms:
            r = integral_defining_sum(T, kind, t).operator
            rhs = r if rhs is None else rhs + r
        worst = max(worst, abs(np.vdot(x.vec, lhs.mat @ y.vec) - np.vdot(x.vec, rhs.mat @ y.vec)))
    assert worst < 1e-10


def test_rewrite_keeps_adaptedness():
    rng = np.random.default_rng(3)
    X = random_simple_biprocess(G, rng, Filter.of([1, 2]), FULL)
    for kind in (ann(1), cre(2), num(3), TIME):
        for T in rewrite_filtered_integrand(X, kind, Filter.of([2])).terms:
            for t in T.times[:-1]:
                assert check_adaptedness(T, t, T.D, T.E).ok


def test_product_of_projection_ampliations():
    D, E = Filter.of([1, 2]), Filter.of([2, 3])
    PD, PE = color_projection(D, G), color_projection(E, G)
    X = SimpleBiprocess.constant(G, PD, PE, D, E)
    B = biprocess_product(X)
    assert B.filter == D & E
    assert abs(B.values[0].mat - color_projection(D & E, G).mat).max() == 0


def test_product_with_identity_right_factor():
    rng = np.random.default_rng(4)
    X = random_simple_biprocess(G, rng, Filter.of([1]), FULL)
    I = identity(G)
    Y = X.with_values(X.left, tuple(I for _ in X.left), X.D, FULL)
    B = biprocess_product(Y)
    for F, H in zip(X.left, B.values):
        assert abs(F.mat - H.mat).max() == 0


def test_product_matches_direct_application():
    rng = np.random.default_rng(5)
    X = random_simple_biprocess(G, rng, Filter.of([1, 3]), Filter.of([3]))
    B = biprocess_product(X)
    x, y = random_state(G, rng), random_state(G, rng)
    for c in range(G.n_cells):
        F, Gv = X.value_at_cell(c)
        direct = np.vdot(x.vec, F.mat @ (Gv.mat @ y.vec))
        assert abs(direct - np.vdot(x.vec, B.value_at_cell(c).mat @ y.vec)) < 1e-13


def test_groups_by_filter_pair():
    rng = np.random.default_rng(6)
    a = random_simple_biprocess(G, rng, EMPTY, FULL)
    b = random_simple_biprocess(G, rng, FULL, FULL)
    c = random_simple_biprocess(G, rng, EMPTY, FULL)
    groups = Biprocess((a, b, c)).groups()
    assert [len(v) for v in groups.values()] == [2, 1]
