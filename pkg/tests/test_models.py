import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthoflow.baselines import dense_ground_space
from orthoflow.manifold import ShapeError, gram, grassmann_gradient, orthonormalize
from orthoflow.models import (
    RHO_MIN,
    Grid1D,
    KohnSham1D,
    KohnSham1DSpec,
    QuadraticModel,
    density,
    external_potential,
    hartree_kernel,
    hartree_potential_1d,
    kohn_sham_model,
    lda_correlation,
    lda_exchange,
    nonlinear_hartree_model,
    quadratic_model,
    wigner_seitz_radius,
    xc_energy_density,
)

from conftest import LIH_NUCLEI, lih_spec

# 30-digit evaluations of the closed forms (mpmath), frozen
EPS_X_1 = -0.73855876638202241
EPS_C_1 = -0.070637801303156823
V_C_1 = -0.078821880296389341
EPS_X_RS1 = -0.45816529328314289
EPS_C_RS1 = -0.059632066378912961
V_C_RS1 = -0.066794428232816258
EPS_X_001 = -0.15911766269205829
EPS_C_001 = -0.037980656410047749
V_C_001 = -0.044243177290180806


def small_spec(**kw):
    return KohnSham1DSpec(Grid1D.centered(40, 12.0), 2, LIH_NUCLEI, **kw)


MODELS = {
    "quadratic": lambda: quadratic_model(small_spec()),
    "hartree": lambda: nonlinear_hartree_model(small_spec()),
    "ks": lambda: kohn_sham_model(small_spec()),
    "ks_no_corr": lambda: kohn_sham_model(small_spec(correlation=False)),
}


def fd_check(model, U, D, t=1e-5):
    fd = (model.energy(U + t * D) - model.energy(U - t * D)) / (2 * t)
    an = float(np.sum(gram(model.gradient(U), D, model.weights).diagonal()))
    return abs(fd - an) / max(abs(an), 1e-300)


# grid

def test_grid_geometry():
    g = Grid1D.centered(15, 8.0)
    assert g.length == pytest.approx(8.0)
    assert g.points[0] == pytest.approx(-4.0 + 0.5)
    assert g.points[-1] == pytest.approx(4.0 - 0.5)
    with pytest.raises(ValueError):
        Grid1D(7, 0.1)


def test_spec_validation():
    g = Grid1D.centered(16, 10.0)
    with pytest.raises(ValueError):
        KohnSham1DSpec(g, 1, ((1.0, 20.0),))
    with pytest.raises(ValueError):
        KohnSham1DSpec(g, 1, ((-1.0, 0.0),))
    with pytest.raises(ValueError):
        KohnSham1DSpec(g, 1, soft_core=0.0)


# quadratic model

def test_quadratic_eigenvectors_are_critical():
    model = quadratic_model(small_spec())
    lam, V = dense_ground_space(model.hamiltonian(), model.quadrature, 2)
    assert model.energy(V) == pytest.approx(2 * lam.sum(), abs=1e-10)
    assert np.abs(grassmann_gradient(model.gradient(V), V, model.weights)).max() <= 1e-10


def test_particle_in_a_box():
    L, n = 1.0, 999
    grid = Grid1D.centered(n, L)
    model = quadratic_model(KohnSham1DSpec(grid, 1))
    x = grid.points - grid.origin  # distance from the left wall
    u = np.sin(np.pi * x / L)[:, None]
    u /= np.sqrt(grid.spacing * np.sum(u * u))
    exact = 2 * np.pi**2 / (2 * L**2)
    assert model.energy(u) == pytest.approx(exact, rel=5 * grid.spacing**2 * np.pi**2)
    assert model.energy(u) != exact


@pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
def test_quadratic_homogeneity(rng, c):
    model = quadratic_model(small_spec())
    U = rng.standard_normal(model.dimension)
    assert model.energy(c * U) == pytest.approx(c * c * model.energy(U), rel=1e-13)


def test_quadratic_model_class_matches_ks_linear(rng):
    spec = small_spec()
    ks = quadratic_model(spec)
    qm = QuadraticModel(ks.hamiltonian(), ks.quadrature, 2)
    U = rng.standard_normal(ks.dimension)
    assert qm.energy(U) == pytest.approx(ks.energy(U), rel=1e-12)
    np.testing.assert_allclose(qm.gradient(U), ks.gradient(U), rtol=1e-12, atol=1e-12)


def test_shape_mismatch_rejected():
    model = kohn_sham_model(small_spec())
    with pytest.raises(ShapeError):
        model.energy(np.ones((41, 2)))
    with pytest.raises(ShapeError):
        model.gradient(np.ones((40, 3)))


# Hartree

def test_hartree_zero_density():
    spec = small_spec()
    assert np.all(hartree_potential_1d(np.zeros(40), spec) == 0)


def test_hartree_point_mass_gives_kernel_column():
    spec = small_spec()
    rho = np.zeros(40)
    rho[17] = 1.0 / spec.grid.spacing
    np.testing.assert_allclose(hartree_potential_1d(rho, spec), hartree_kernel(spec)[:, 17], rtol=1e-14)


def test_hartree_matches_double_loop():
    spec = KohnSham1DSpec(Grid1D.centered(16, 6.0), 1, hartree_soft_core=0.7)
    rho = np.full(16, 0.3)
    x, h, b = spec.grid.points, spec.grid.spacing, 0.7
    expect = [sum(h * rho[j] / math.sqrt((x[i] - x[j]) ** 2 + b * b) for j in range(16)) for i in range(16)]
    np.testing.assert_allclose(hartree_potential_1d(rho, spec), expect, rtol=1e-13)


def test_hartree_scale_zero_is_quadratic(rng):
    spec = small_spec(hartree_scale=0.0).without_xc()
    a, b = KohnSham1D(spec), quadratic_model(spec)
    U = rng.standard_normal(a.dimension)
    assert a.energy(U) == b.energy(U)
    assert np.array_equal(a.gradient(U), b.gradient(U))


# per-term naive recomputation

def test_energy_terms_match_naive_loops(rng):
    spec = KohnSham1DSpec(Grid1D.centered(12, 6.0), 2, ((2.0, -0.5), (1.0, 1.0)), soft_core=0.8, hartree_soft_core=1.2)
    model = KohnSham1D(spec)
    U = rng.standard_normal((12, 2))
    h, x = spec.grid.spacing, spec.grid.points
    ng = 12
    kin = 0.0
    for i in range(2):
        col = [0.0, *U[:, i], 0.0]
        for g in range(ng + 1):
            kin += h * ((col[g + 1] - col[g]) / h) ** 2
    rho = [2 * sum(U[g, i] ** 2 for i in range(2)) for g in range(ng)]
    vext = [-sum(z / math.sqrt((x[g] - r) ** 2 + 0.64) for z, r in spec.nuclei) for g in range(ng)]
    ext = sum(h * vext[g] * rho[g] for g in range(ng))
    har = 0.5 * sum(
        h * h * rho[g] * rho[k] / math.sqrt((x[g] - x[k]) ** 2 + 1.44) for g in range(ng) for k in range(ng)
    )
    xc = 0.0
    for g in range(ng):
        r = max(rho[g], RHO_MIN)
        ex = -0.75 * (3 / math.pi) ** (1 / 3) * r ** (1 / 3)
        rs = (3 / (4 * math.pi * r)) ** (1 / 3)
        if rs >= 1:
            ec = -0.1423 / (1 + 1.0529 * math.sqrt(rs) + 0.3334 * rs)
        else:
            ec = 0.0311 * math.log(rs) - 0.048 + 0.0020 * rs * math.log(rs) - 0.0116 * rs
        xc += h * rho[g] * (ex + ec)
    t = model.terms(U)
    assert t.kinetic == pytest.approx(kin, rel=1e-12)
    assert t.external == pytest.approx(ext, rel=1e-12)
    assert t.hartree == pytest.approx(har, rel=1e-12)
    assert t.xc == pytest.approx(xc, rel=1e-12)
    assert model.energy(U) == pytest.approx(kin + ext + har + xc, rel=1e-12)


def test_pure_kinetic_isolation(rng):
    spec = KohnSham1DSpec(Grid1D.centered(30, 8.0), 1, (), hartree_scale=0.0, exchange=False, correlation=False)
    ks = KohnSham1D(spec)
    U = rng.standard_normal((30, 1))
    t = ks.terms(U)
    assert t.external == t.hartree == t.xc == 0.0
    assert ks.energy(U) == quadratic_model(spec).energy(U)
    np.testing.assert_array_equal(ks.gradient(U), 4 * (-0.5 * (spec.grid.laplacian() @ U)))


# LDA

def test_lda_exchange_spot_values():
    assert lda_exchange(1.0)[0] == pytest.approx(EPS_X_1, rel=1e-14)
    assert lda_exchange(3 / (4 * np.pi))[0] == pytest.approx(EPS_X_RS1, rel=1e-14)
    assert lda_exchange(0.01)[0] == pytest.approx(EPS_X_001, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(rho=st.floats(1e-10, 1e4))
def test_lda_exchange_potential_ratio(rho):
    e, v = lda_exchange(rho)
    assert v / e == pytest.approx(4 / 3, rel=1e-14)


def test_lda_exchange_at_zero_is_clamped():
    e, v = lda_exchange(0.0)
    assert e == lda_exchange(RHO_MIN)[0]
    assert -1e-4 < e < 0 and -1e-4 < v < 0


def test_lda_correlation_spot_values():
    rho = 3 / (4 * np.pi)
    assert wigner_seitz_radius(rho) == pytest.approx(1.0, abs=1e-15)
    e, v = lda_correlation(rho)
    assert e == pytest.approx(-0.1423 / (1 + 1.0529 + 0.3334), rel=1e-14)
    assert e == pytest.approx(EPS_C_RS1, rel=1e-14)
    assert v == pytest.approx(V_C_RS1, rel=1e-13)
    assert lda_correlation(1.0) == pytest.approx((EPS_C_1, V_C_1), rel=1e-13)
    assert lda_correlation(0.01) == pytest.approx((EPS_C_001, V_C_001), rel=1e-13)


def test_lda_correlation_branch_gap_is_small():
    def rho_at(rs):
        return 3 / (4 * np.pi * rs**3)

    lo, _ = lda_correlation(rho_at(1 - 1e-9))
    hi, _ = lda_correlation(rho_at(1 + 1e-9))
    gap = abs(lo - hi)
    assert 0 < gap < 1e-3


@pytest.mark.parametrize("rho", [0.01, 0.3, 5.0])
def test_lda_correlation_potential_matches_fd(rho):
    t = 1e-6 * rho

    def e(r):
        return r * lda_correlation(r)[0]

    fd = (e(rho + t) - e(rho - t)) / (2 * t)
    assert lda_correlation(rho)[1] == pytest.approx(fd, rel=1e-7)


def test_xc_arrays_and_floor():
    rho = np.array([0.0, 1e-14, 0.2, 3.0])
    e, v = xc_energy_density(rho)
    assert e.shape == v.shape == (4,)
    assert e[0] == 0.0
    np.testing.assert_allclose(v[:2], lda_exchange(RHO_MIN)[0] + lda_correlation(RHO_MIN)[0])
    e2, v2 = xc_energy_density(rho, exchange=False, correlation=False)
    assert not e2.any() and not v2.any()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_density_nonnegative(seed):
    U = np.random.default_rng(seed).standard_normal((20, 3))
    rho = density(U)
    assert np.all(rho >= 0)
    np.testing.assert_allclose(rho, 2 * np.sum(U**2, axis=1))


# interface invariants across models

@pytest.mark.parametrize("name", list(MODELS))
def test_gradient_finite_difference(rng, name):
    model = MODELS[name]()
    for _ in range(5):
        U = orthonormalize(rng.standard_normal(model.dimension), model.weights)
        D = rng.standard_normal(model.dimension)
        assert fd_check(model, U, D) <= 1e-6


@pytest.mark.parametrize("name", list(MODELS))
def test_unitary_invariance(rng, name):
    model = MODELS[name]()
    U = orthonormalize(rng.standard_normal(model.dimension), model.weights)
    P, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    assert model.energy(U @ P) == pytest.approx(model.energy(U), abs=1e-11)
    np.testing.assert_allclose(model.gradient(U @ P), model.gradient(U) @ P, atol=1e-10)


@pytest.mark.parametrize("name", list(MODELS))
def test_gradient_gram_symmetry_off_manifold(rng, name):
    model = MODELS[name]()
    U = 3 * rng.standard_normal(model.dimension)
    M = gram(model.gradient(U), U, model.weights)
    assert np.abs(M - M.T).max() <= 1e-10 * max(1.0, np.abs(M).max())


def test_scaled_model(rng):
    model = kohn_sham_model(small_spec())
    s = model.scaled(3.0)
    U = rng.standard_normal(model.dimension)
    assert s.energy(U) == pytest.approx(3 * model.energy(U), rel=1e-14)
    np.testing.assert_allclose(s.gradient(U), 3 * model.gradient(U), rtol=1e-14)
    assert s.dimension == model.dimension


def test_external_potential_values():
    spec = lih_spec(n_points=16, length=10.0)
    x = spec.grid.points
    expect = -3 / np.sqrt((x + 1.5) ** 2 + 1) - 1 / np.sqrt((x - 1.5) ** 2 + 1)
    np.testing.assert_allclose(external_potential(spec), expect, rtol=1e-15)
