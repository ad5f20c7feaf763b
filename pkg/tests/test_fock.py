import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filtered_fock.fock import (
    EMPTY,
    FULL,
    ExpState,
    Filter,
    FockError,
    GridSpec,
    OneParticleVector,
    all_subsets,
    annihilation,
    band_projection,
    color_projection,
    creation,
    exponential_vector,
    fock_exponential,
    identity,
    inner,
    past_future_split,
    tensor_past_future,
    vacuum,
)
from filtered_fock.processes import cre, fundamental, num, TIME

from support import DEFAULT_GRID, exp_partial, random_state, random_u

G = DEFAULT_GRID


def test_grid_invariants():
    assert G.dt == pytest.approx(0.125)
    assert G.n_modes == 24
    assert G.times.tolist() == [j / 8 for j in range(9)]
    with pytest.raises(FockError):
        GridSpec(horizon=0.0)
    with pytest.raises(FockError):
        G.cell_of(0.3)
    with pytest.raises(FockError):
        G.check_color(4)


def test_filter_validation():
    assert Filter.of([1, 2]).issubset(FULL)
    assert EMPTY.issubset(Filter.of([3]))
    with pytest.raises(FockError):
        Filter.of([5]).validate(3)


def test_exponential_of_zero_is_vacuum():
    e = fock_exponential(OneParticleVector.zeros(G))
    assert e[0] == 1 and np.count_nonzero(e) == 1


def test_single_mode_norm_matches_partial_exponential():
    # amplitude 0.5 on one mode: ‖ε(u)‖² = Σ_{n≤3} 0.25^n / n!
    c = np.zeros((8, 3), complex)
    c[2, 1] = 0.5 / math.sqrt(G.dt)
    u = OneParticleVector(G, c)
    e = fock_exponential(u)
    direct = 1 + 0.25 + 0.25 ** 2 / 2 + 0.25 ** 3 / 6
    assert abs(np.vdot(e, e) - direct) < 1e-15


def test_disjoint_modes_give_unit_overlap():
    u = OneParticleVector.indicator(G, 1, 0.0, 0.5)
    v = OneParticleVector.indicator(G, 2, 0.5, 1.0)
    assert np.vdot(fock_exponential(u), fock_exponential(v)) == 1


def test_exponential_inner_product_is_partial_sum():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        u = random_u(G, rng, rng.uniform(0, 1))
        v = random_u(G, rng, rng.uniform(0, 1))
        got = np.vdot(fock_exponential(u), fock_exponential(v))
        worst = max(worst, abs(got - exp_partial(u.inner(v), G.n_max)))
    assert worst < 1e-14


def test_state_inner_factorizes():
    rng = np.random.default_rng(3)
    x, y = random_state(G, rng), random_state(G, rng)
    ee = np.vdot(fock_exponential(x.u), fock_exponential(y.u))
    assert abs(inner(x.vec, y.vec) - np.vdot(x.w, y.w) * ee) < 1e-14


def test_creation_is_adjoint_of_annihilation():
    rng = np.random.default_rng(5)
    f = random_u(G, rng)
    a, ad = annihilation(f), creation(f)
    assert abs(a.mat.conj().T - ad.mat).max() == 0
    assert abs(ad.H.H.mat - ad.mat).max() == 0


def test_annihilation_eigen_relation_up_to_top_degree():
    rng = np.random.default_rng(6)
    f, u = random_u(G, rng), random_u(G, rng)
    space = G.space
    e = fock_exponential(u)
    x = exponential_vector(u)
    out = annihilation(f).mat @ x
    expect = f.inner(u) * x
    below = np.tile(space.degree < G.n_max, G.h0_dim)
    assert np.abs(out - expect)[below].max() < 1e-14
    assert e.shape[0] == space.dim


def test_creation_matrix_element_density():
    g4 = G.with_nmax(4)
    errs = []
    for g in (G, g4):
        r = np.random.default_rng(8)
        x, y = random_state(g, r, 0.5), random_state(g, r, 0.5)
        t = 0.625
        k = 2
        Ak = fundamental(cre(k), t, g)
        lhs = np.vdot(x.vec, Ak.mat @ y.vec)
        dens = np.conj(x.u.coef[:5, k - 1]).sum() * g.dt
        errs.append(abs(lhs - dens * np.vdot(x.vec, y.vec)))
    assert errs[1] < errs[0] < 1e-2


def test_number_kills_vacuum():
    N = fundamental(num(1), 1.0, G)
    assert np.abs(N.mat @ vacuum(G)).max() == 0
    T = fundamental(TIME, 0.5, G)
    assert abs(T.mat - 0.5 * identity(G).mat).max() == 0


def test_color_projection_examples():
    rng = np.random.default_rng(9)
    u = random_u(G, rng)
    w = np.array([1.0, 0.5j])
    x = exponential_vector(u, w)
    assert np.allclose(color_projection(EMPTY, G).mat @ x, exponential_vector(OneParticleVector.zeros(G), w))
    assert np.allclose(color_projection(FULL, G).mat @ x, x)
    V = Filter.of([1])
    assert np.allclose(color_projection(V, G).mat @ x, exponential_vector(u.restrict_colors(V), w), atol=1e-15)
    u12 = random_u(G, rng, colors=2)
    y = exponential_vector(u12)
    assert np.allclose(color_projection(Filter.of([1, 2]), G).mat @ y, y)


@pytest.mark.parametrize("C", [1, 2, 3, 4])
def test_projection_lattice_exhaustive(C):
    g = GridSpec(1.0, 2, C, 2, 1)
    for V, W in itertools.product(all_subsets(C) + [FULL], repeat=2):
        PV, PW = color_projection(V, g), color_projection(W, g)
        assert abs((PV @ PW).mat - color_projection(V & W, g).mat).max() == 0
        assert abs(PV.mat - PV.mat.conj().T).max() == 0


def test_bands_resolve_and_are_orthogonal():
    Ps = [band_projection(k, G) for k in range(G.n_colors + 1)]
    for i, j in itertools.combinations(range(len(Ps)), 2):
        assert (Ps[i] @ Ps[j]).mat.nnz == 0
    total = sum((P.mat for P in Ps[1:]), Ps[0].mat)
    assert abs(total - color_projection(Filter.of(range(1, 4)), G).mat).max() == 0
    assert abs(Ps[0].mat - color_projection(EMPTY, G).mat).max() == 0
    with pytest.raises(FockError):
        band_projection(4, G)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 3), colors=st.sets(st.integers(1, 3)), j=st.integers(0, 8))
def test_filtered_commutation(k, colors, j):
    V = Filter.of(colors)
    t = G.time(j)
    P = color_projection(V, G)
    A = fundamental(cre(k), t, G)
    lhs = (P @ A).mat
    rhs = (A @ P).mat * (1 if k in V else 0)
    assert abs(lhs - rhs).max() == 0 if (lhs - rhs).nnz else True
    N = fundamental(num(k), t, G)
    d = (P @ N).mat - (N @ P).mat
    assert d.nnz == 0 or abs(d).max() == 0


def test_past_future_split():
    rng = np.random.default_rng(12)
    x = random_state(G, rng)
    p0, f0 = past_future_split(x, 0.0)
    assert np.count_nonzero(p0.u.coef) == 0 and np.array_equal(f0.u.coef, x.u.coef)
    pT, fT = past_future_split(x, 1.0)
    assert np.count_nonzero(fT.u.coef) == 0
    y = random_state(G, rng)
    t = 0.5
    (xp, xf), (yp, yf) = x.split(t), y.split(t)
    exact = np.vdot(x.w, y.w) * np.exp(x.u.inner(y.u))
    split = np.vdot(xp.w, yp.w) * np.exp(xp.u.inner(yp.u)) * np.exp(xf.u.inner(yf.u))
    assert abs(exact - split) < 1e-14
    # recombination reproduces the state up to the dropped top degrees
    big = G.with_nmax(4)
    xb = ExpState(x.w, OneParticleVector(big, x.u.coef))
    pb, fb = xb.split(t)
    rec = tensor_past_future(pb.vec, fock_exponential(fb.u), t, big)
    keep = np.tile(big.space.degree <= 4, big.h0_dim)
    assert np.abs(rec - xb.vec)[keep].max() < 1e-15


def test_dense_cap():
    small = GridSpec(1.0, 2, 2, 2, 1)
    assert identity(small).dense().shape == (small.dim, small.dim)
    with pytest.raises(FockError):
        identity(G).dense()
