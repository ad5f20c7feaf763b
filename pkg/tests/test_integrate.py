import math

import numpy as np
import pytest

from filtered_fock.biprocess import SimpleBiprocess, random_filter, random_simple_biprocess
from filtered_fock.fock import EMPTY, FULL, ExpState, Filter, FockError, OneParticleVector, identity, zero
from filtered_fock.integrate import (
    MeasureDensity,
    compare_with_oracle,
    delta_pair,
    integral_apply,
    integral_defining_sum,
    ito_inner,
    matrix_element_fast,
    mu,
    multiplier,
    norm_estimate,
    seminorm,
    sum_integrals,
)
from filtered_fock.processes import TIME, all_kinds, ann, cell_increment, cre, num

from support import DEFAULT_GRID, random_state, random_u

G = DEFAULT_GRID


def test_mu_examples():
    rng = np.random.default_rng(0)
    u, v = random_u(G, rng), random_u(G, rng)
    assert mu(TIME, u, v).mass(0.0, 0.5) == pytest.approx(0.5)
    z = OneParticleVector.zeros(G)
    assert mu(ann(2), u, z).mass() == 0
    one = OneParticleVector.indicator(G, 1, 0.0, 1.0)
    assert mu(num(1), one, one).mass() == pytest.approx(1.0)
    assert mu(cre(3), u, v).mass() == pytest.approx(G.dt * np.conj(u.coef[:, 2]).sum())


def test_measure_density_arithmetic():
    a = MeasureDensity(G, np.arange(8) - 3.0)
    b = MeasureDensity.lebesgue(G)
    assert (a + b).mass() == pytest.approx(a.mass() + 1.0)
    assert a.variation().mass() == pytest.approx(G.dt * np.abs(np.arange(8) - 3.0).sum())
    with pytest.raises(FockError):
        MeasureDensity(G, np.ones(3))


def test_multiplier_examples():
    assert multiplier(cre(2), Filter.of([1]), FULL) == 0
    assert multiplier(TIME, EMPTY, EMPTY) == 1
    assert multiplier(num(1), Filter.of([1, 2]), Filter.of([1])) == 1
    assert multiplier(ann(3), FULL, Filter.of([1, 2])) == 0


def test_time_integral_of_identity():
    r = integral_defining_sum(SimpleBiprocess.identity(G), TIME, 0.625)
    assert abs(r.operator.mat - identity(G).scale(0.625).mat).max() < 1e-15
    assert r.provenance == "defining-sum"


def test_single_cell_integral():
    rng = np.random.default_rng(1)
    X = random_simple_biprocess(G, rng, FULL, FULL, max_pieces=1)
    F, Gv = X.left[0], X.right[0]
    r = integral_defining_sum(X, cre(2), 0.125)
    direct = F @ cell_increment(cre(2), 0, 1, G) @ Gv
    assert abs(r.operator.mat - direct.mat).max() == 0


def test_refinement_leaves_defining_sum_unchanged():
    rng = np.random.default_rng(2)
    for kind in all_kinds(3):
        X = random_simple_biprocess(G, rng, random_filter(G, rng), random_filter(G, rng))
        Y = X.refine([0.125, 0.375, 0.75])
        a = integral_defining_sum(X, kind, 1.0).operator.mat
        b = integral_defining_sum(Y, kind, 1.0).operator.mat
        assert (a - b).nnz == 0 or abs(a - b).max() == 0


def test_linearity_and_time_additivity():
    rng = np.random.default_rng(3)
    X = random_simple_biprocess(G, rng, FULL, Filter.of([1]))
    Y = X.scale(2.0 - 1.0j)
    x = random_state(G, rng)
    for kind in (ann(1), cre(2), num(1), TIME):
        a = integral_apply(X, kind, 1.0, x.vec)
        b = integral_apply(Y, kind, 1.0, x.vec)
        assert np.abs(b - (2.0 - 1.0j) * a).max() < 1e-13
        part = integral_apply(X, kind, 0.5, x.vec)
        rest = a - part
        ref = X.refine([0.5])
        late = ref.with_values(
            [F if t >= 0.5 else zero(G) for F, t in zip(ref.left, ref.times)], ref.right, X.D, X.E
        )
        assert np.abs(rest - integral_apply(late, kind, 1.0, x.vec)).max() < 1e-13


def test_fast_zero_cases():
    rng = np.random.default_rng(4)
    x, y = random_state(G, rng), random_state(G, rng)
    X = random_simple_biprocess(G, rng, Filter.of([1]), FULL)
    assert matrix_element_fast(x, X, cre(2), 1.0, y) == 0
    for kind in (ann(1), cre(1), num(1)):
        assert matrix_element_fast(x, X, kind, 0.0, y) == 0
    with pytest.raises(FockError):
        matrix_element_fast(x.vec, X, TIME, 1.0, y)


def test_fast_identity_creation():
    for g in (G, G.with_nmax(4)):
        x = random_state(g, np.random.default_rng(5), 0.6)
        fast = matrix_element_fast(x, SimpleBiprocess.identity(g), cre(1), 0.5, x)
        expect = g.dt * np.conj(x.u.coef[:4, 0]).sum() * np.vdot(x.w, x.w) * math.exp(x.u.norm() ** 2)
        assert abs(fast - expect) < 5e-2


def test_oracle_agreement_random():
    rng = np.random.default_rng(6)
    kinds = all_kinds(3)
    for _ in range(30):
        D, E = random_filter(G, rng), random_filter(G, rng)
        kind = kinds[int(rng.integers(len(kinds)))]
        X = random_simple_biprocess(G, rng, D, E)
        x, y = random_state(G, rng), random_state(G, rng)
        r = compare_with_oracle(x, X, kind, G.time(int(rng.integers(0, 9))), y)
        assert r.ok, r


def test_delta_pair_creation_creation_full():
    rng = np.random.default_rng(7)
    u = random_u(G, rng, 0.5)
    c = u.coef.copy()
    c[4:6] = c[0:2]
    u = OneParticleVector(G, c)
    x = ExpState(np.array([1.0, 0.5j]), u)
    y = ExpState(np.array([0.3, 1.0]), u)
    r = delta_pair(cre(2), cre(2), (FULL, FULL, FULL, FULL), x, y, 0.0, 0.25, (0.5, 0.75))
    assert r.mass == pytest.approx(0.25)
    assert r.ok
    r = delta_pair(cre(2), cre(1), (FULL,) * 4, x, y, 0.0, 0.25, (0.5, 0.75))
    assert r.mass == 0 and r.ok
    r = delta_pair(cre(2), cre(2), (Filter.of([1]), FULL, FULL, FULL), x, y, 0.0, 0.25, (0.5, 0.75))
    assert r.mass == 0 and r.ok
    with pytest.raises(FockError):
        delta_pair(cre(2), cre(2), (FULL,) * 4, x, y, 0.0, 0.25, (0.125, 0.375))


def test_ito_inner_time_time_has_no_correction():
    rng = np.random.default_rng(8)
    X1 = random_simple_biprocess(G, rng)
    X2 = random_simple_biprocess(G, rng)
    x, y = random_state(G, rng), random_state(G, rng)
    r = ito_inner(x, X1, TIME, X2, TIME, 1.0, y)
    assert r.terms[2] == 0 and r.ok


def test_ito_inner_random_filters():
    rng = np.random.default_rng(9)
    kinds = all_kinds(3)
    for _ in range(12):
        X1 = random_simple_biprocess(G, rng, random_filter(G, rng), random_filter(G, rng))
        X2 = random_simple_biprocess(G, rng, random_filter(G, rng), random_filter(G, rng))
        k1 = kinds[int(rng.integers(len(kinds)))]
        k2 = kinds[int(rng.integers(len(kinds)))]
        x, y = random_state(G, rng), random_state(G, rng)
        r = ito_inner(x, X1, k1, X2, k2, 1.0, y)
        assert r.ok, (k1, k2, r)


def test_norm_estimate_time_formula():
    rng = np.random.default_rng(10)
    X = random_simple_biprocess(G, rng)
    x = random_state(G, rng)
    r = norm_estimate(X, TIME, 1.0, x)
    cells = [np.linalg.norm(X.value_at_cell(c)[0].mat @ (X.value_at_cell(c)[1].mat @ x.vec)) ** 2
             for c in range(8)]
    assert r.bound == pytest.approx(math.e * G.dt * sum(cells))
    assert r.ok


def test_norm_estimate_zero_and_random():
    rng = np.random.default_rng(11)
    x = random_state(G, rng)
    Z = SimpleBiprocess.constant(G, zero(G), zero(G))
    r = norm_estimate(Z, cre(1), 1.0, x)
    assert r.actual == 0 and r.bound == 0
    kinds = all_kinds(3)
    for _ in range(20):
        X = random_simple_biprocess(G, rng, random_filter(G, rng), random_filter(G, rng))
        kind = kinds[int(rng.integers(len(kinds)))]
        assert norm_estimate(X, kind, G.time(int(rng.integers(1, 9))), random_state(G, rng)).ok


def test_seminorm_scalar_and_additive():
    rng = np.random.default_rng(12)
    x = random_state(G, rng)
    c = 1.5
    X = SimpleBiprocess.identity(G).scale(c)
    s = seminorm(X, x, 1.0, TIME)
    assert s ** 2 == pytest.approx(c ** 2 * np.linalg.norm(x.vec) ** 2 * 1.0)
    Y = random_simple_biprocess(G, rng)
    whole = seminorm(Y, x, 1.0, num(1)) ** 2
    first = seminorm(Y, x, 0.5, num(1)) ** 2
    assert whole >= first
    late = Y.refine([0.5])
    mask = [zero(G) if t < 0.5 else F for F, t in zip(late.left, late.times)]
    second = seminorm(late.with_values(mask, late.right, late.D, late.E), x, 1.0, num(1)) ** 2
    assert whole == pytest.approx(first + second)


def test_sum_integrals():
    rng = np.random.default_rng(13)
    x = random_state(G, rng)
    X = random_simple_biprocess(G, rng)
    single = sum_integrals({cre(2): X}, 1.0, x)
    assert np.allclose(single.value, integral_apply(X, cre(2), 1.0, x.vec))
    empty = sum_integrals({}, 1.0, x)
    assert np.abs(empty.value).max() == 0
    family = {k: random_simple_biprocess(G, rng) for k in all_kinds(3)}
    rep = sum_integrals(family, 1.0, x)
    direct = sum(integral_apply(Xk, k, 1.0, x.vec) for k, Xk in family.items())
    assert np.abs(rep.value - direct).max() < 1e-13
    assert rep.ok
