import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdii.diagnostics import frobenius, relative_l2_error
from cdii.fields import Grid2D, Matrix2Field, ScalarField2, SymTensor2Field, VectorField2
from cdii.recon import (BetaBC, ConstraintPair, CoefficientFields, ReconError, ReconOptions, b_matrix,
                        basis_coefficients, constraint_matrices, cramer, degeneracy, log_beta_gradient,
                        orientation, reconstruct_full, recover_beta, tilde_gamma_averaged,
                        tilde_gamma_single, z_matrices)
from cdii.synth import MeasurementSet, generate_measurements, make_illuminations, make_phantom

G3 = Grid2D(3, 3, 1.0)


def const_vec(g, a, b):
    return VectorField2(g, np.full(g.shape, float(a)), np.full(g.shape, float(b)))


def const_sym(g, a, b, c):
    return Matrix2Field.sym(g, np.full(g.shape, float(a)), np.full(g.shape, float(b)), np.full(g.shape, float(c)))


def mset(*fields):
    return MeasurementSet(list(fields), [f"H{k}" for k in range(len(fields))])


@pytest.fixture(scope="module")
def exp1():
    g = Grid2D.square(80)
    truth = make_phantom("exp1_smooth", g)
    return truth, generate_measurements(truth, make_illuminations("poly5", g))


# -- Cramer coefficients ------------------------------------------------------

def test_cramer_examples():
    c1, c2, mask = cramer(const_vec(G3, 1, 0), const_vec(G3, 0, 1), const_vec(G3, 0.3, -2))
    np.testing.assert_allclose(c1, 0.3)
    np.testing.assert_allclose(c2, -2)
    H1, H2, H3 = const_vec(G3, 1, 0), const_vec(G3, 1, 1), const_vec(G3, 3, 2)
    c1, c2, _ = cramer(H1, H2, H3)
    np.testing.assert_allclose(c1, 1.0)
    np.testing.assert_allclose(c2, 2.0)
    np.testing.assert_allclose(c1 * H1.cx + c2 * H2.cx, H3.cx)
    c1, c2, _ = cramer(H1, H2, H1)
    np.testing.assert_allclose((c1, c2), (np.ones(G3.shape), np.zeros(G3.shape)))
    assert not mask.any()


def test_basis_coefficients_masks_collinear_nodes():
    g = Grid2D.square(6)
    X, _ = g.mesh()
    H1 = const_vec(g, 1, 0)
    H2 = VectorField2(g, np.ones(g.shape), np.where(X > 0.5, 0.0, 1.0))
    H = mset(H1, H2, const_vec(g, 2, 1), const_vec(g, 1, 3))
    c = basis_coefficients(H, (0, 1), (2, 3))
    assert c.mask.sum() == (X > 0.5).sum()
    assert np.all(np.isfinite(c.mu1.values))
    with pytest.raises(ReconError):
        basis_coefficients(H, (0, 1), (2, 3), ReconOptions(max_masked_fraction=0.1))


# -- Z, M, B -------------------------------------------------------------------

def test_z_matrices_examples():
    g = Grid2D.square(10)
    X, Y = g.mesh()
    zero = np.zeros(g.shape)
    f = lambda a: ScalarField2(g, a)
    Z1, Z2 = z_matrices(CoefficientFields(f(zero + 2), f(zero - 1), f(zero), f(zero + 5), zero.astype(bool)))
    assert np.all(Z1.stack() == 0) and np.all(Z2.stack() == 0)
    Z1, _ = z_matrices(CoefficientFields(f(X), f(Y), f(zero), f(zero), zero.astype(bool)))
    np.testing.assert_allclose(Z1.stack(), np.broadcast_to(np.eye(2), g.shape + (2, 2)), atol=1e-13)
    Z1, _ = z_matrices(CoefficientFields(f(X**2), f(zero), f(zero), f(zero), zero.astype(bool)))
    np.testing.assert_allclose(Z1.a11[1:-1, 1:-1], 2 * X[1:-1, 1:-1], atol=1e-12)
    np.testing.assert_allclose(Z1.a21, 0.0, atol=1e-12)


def test_constraint_matrix_examples():
    I_ = const_sym(G3, 1, 0, 1)
    e1, e2 = const_vec(G3, 1, 0), const_vec(G3, 0, 1)
    M = constraint_matrices(I_, I_, e1, e2)
    assert np.all(M.M1.stack() == 0)
    Z = const_sym(G3, 1, 0, 0)
    M = constraint_matrices(Z, Z, e1, e2)
    np.testing.assert_allclose(M.M1.stack()[0, 0], [[0, -0.5], [-0.5, 0]])
    rng = np.random.default_rng(0)
    Zr = Matrix2Field(G3, *(rng.normal(size=G3.shape) for _ in range(4)))
    M = constraint_matrices(Zr, Zr, VectorField2(G3, *rng.normal(size=(2, 3, 3))), e2)
    np.testing.assert_array_equal(M.M1.a12, M.M1.a21)


def test_b_matrix_examples():
    M1, M2 = const_sym(G3, 1, 0, -1), const_sym(G3, 0, 1, 0)
    B = b_matrix(ConstraintPair(M1, M2))
    np.testing.assert_allclose(B.stack()[1, 1], [[-2, 0], [0, -2]])
    assert np.all(frobenius(B, M1) == 0) and np.all(frobenius(B, M2) == 0)
    np.testing.assert_allclose(b_matrix(ConstraintPair(M2, M1)).stack(), -B.stack())
    Bz = b_matrix(ConstraintPair(M1, const_sym(G3, -2.5, 0, 2.5)))
    assert np.all(Bz.stack() == 0)


sym_entries = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(sym_entries, min_size=6, max_size=6))
def test_b_is_orthogonal_to_both_constraints(v):
    M1, M2 = const_sym(G3, *v[:3]), const_sym(G3, *v[3:])
    B = b_matrix(ConstraintPair(M1, M2))
    scale = np.sqrt(frobenius(B, B) * (frobenius(M1, M1) + frobenius(M2, M2))) + 1e-300
    assert np.all(np.abs(frobenius(B, M1)) <= 1e-12 * scale)
    assert np.all(np.abs(frobenius(B, M2)) <= 1e-12 * scale)


# -- anisotropy ----------------------------------------------------------------

def test_tilde_gamma_single_examples():
    xi, zeta, mask = tilde_gamma_single(const_sym(G3, -2, 0, -2))
    np.testing.assert_allclose(xi, 1.0)
    np.testing.assert_allclose(zeta, 0.0)
    assert not mask.any()
    xi, zeta, _ = tilde_gamma_single(const_sym(G3, 4, 0, 1))
    np.testing.assert_allclose(xi, 2.0)
    _, _, mask = tilde_gamma_single(const_sym(G3, 0, 0, 0))
    assert mask.all()


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 20), st.floats(-5, 5), st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
def test_tilde_gamma_single_has_unit_determinant(xi, zeta, c):
    # any nonzero multiple of an SPD unit-determinant matrix normalizes back to it
    B = const_sym(G3, c * xi, c * zeta, c * (1 + zeta**2) / xi)
    x, z, mask = tilde_gamma_single(B)
    assert not mask.any()
    s = orientation(B) / np.sqrt(np.abs(B.det()))
    np.testing.assert_allclose(x * (s * B.a22) - z**2, 1.0, rtol=1e-12)
    np.testing.assert_allclose(x, xi, rtol=1e-12)


def test_orientation_rule():
    B = Matrix2Field.sym(G3, np.array([[1, -1, 0]] * 3), np.zeros(G3.shape), np.array([[0, 0, -3]] * 3))
    np.testing.assert_array_equal(orientation(B)[0], [1, -1, -1])
    assert orientation(const_sym(G3, 0, 1, 0)).min() == 1.0


def test_degeneracy_measure():
    assert degeneracy(const_sym(G3, 3, 0, 3)).min() == pytest.approx(1.0)
    assert degeneracy(const_sym(G3, 1, 1, 1)).max() == 0.0
    assert degeneracy(const_sym(G3, 0, 0, 0)).max() == 0.0


def constant_gamma_data(g, a=2.0, b=0.5, c=1.0, beta=1.7):
    """Exact fluxes of u = x, y and three quadratics annihilated by a constant gamma."""
    X, Y = g.mesh()
    grads = [(1 + 0 * X, 0 * X), (0 * X, 1 + 0 * X),
             (2 * c * X, -2 * a * Y),            # c x^2 - a y^2
             (Y - 2 * b / a * X, X),             # xy - (b/a) x^2
             (Y, X - 2 * b / c * Y)]             # xy - (b/c) y^2
    fields = [VectorField2(g, beta * (a * ux + b * uy), beta * (b * ux + c * uy)) for ux, uy in grads]
    xi, zeta = a / np.sqrt(a * c - b * b), b / np.sqrt(a * c - b * b)
    return mset(*fields), xi, zeta


def test_constant_gamma_reconstruction_is_exact():
    g = Grid2D.square(12)
    H, xi, zeta = constant_gamma_data(g)
    beta = 1.7 * np.sqrt(2.0 * 1.0 - 0.25)
    res = reconstruct_full(H, ReconOptions(beta_bc=BetaBC("anchor", point=(0, 0), value=beta)))
    assert not res.mask.any()
    np.testing.assert_allclose(res.xi.values, xi, rtol=1e-10)
    np.testing.assert_allclose(res.zeta.values, zeta, rtol=1e-10)
    np.testing.assert_allclose(res.beta.values, beta, rtol=1e-10)
    np.testing.assert_allclose(res.gamma_tilde.det(), 1.0, rtol=1e-12)


def test_single_pair_average_equals_single(exp1):
    _, H = exp1
    opts = ReconOptions(extra_pairs=[(2, 3)], definite_only=False, b_shape_floor=0.0)
    an = tilde_gamma_averaged(H, opts)
    c = basis_coefficients(H, (0, 1), (2, 3), opts)
    B = b_matrix(constraint_matrices(*z_matrices(c), H[0], H[1]))
    xi, zeta, mask = tilde_gamma_single(B)
    keep = ~(mask | an.mask)
    np.testing.assert_allclose(an.xi.values[keep], xi[keep], rtol=1e-12)
    np.testing.assert_allclose(an.zeta.values[keep], zeta[keep], rtol=1e-10, atol=1e-13)


def test_duplicated_pairs_give_identical_result(exp1):
    _, H = exp1
    pairs = [(2, 3), (2, 4), (3, 4)]
    a = tilde_gamma_averaged(H, ReconOptions(extra_pairs=pairs))
    b = tilde_gamma_averaged(H, ReconOptions(extra_pairs=pairs * 2))
    np.testing.assert_allclose(b.xi.values, a.xi.values, rtol=1e-14)
    np.testing.assert_allclose(b.zeta.values, a.zeta.values, rtol=1e-13, atol=1e-15)


def test_exp1_anisotropy_accuracy(exp1):
    truth, H = exp1
    an = tilde_gamma_averaged(H, ReconOptions(extra_pairs=[(2, 3), (2, 4), (3, 4)]))
    assert relative_l2_error(an.xi, truth.xi) <= 0.01
    assert relative_l2_error(an.zeta, truth.zeta) <= 0.01
    np.testing.assert_allclose(an.tilde().det(), 1.0, rtol=1e-12)
    assert 0.0 <= an.independence.values.min() and an.independence.values.max() <= 1.0


# -- beta ----------------------------------------------------------------------

def test_log_beta_gradient_examples():
    g = Grid2D.square(40)
    X, _ = g.mesh()
    I_ = const_sym(g, 1, 0, 1)
    G, mask = log_beta_gradient(const_vec(g, 1, 0), const_vec(g, 0, 1), I_)
    assert np.all(G.cx == 0) and np.all(G.cy == 0) and not mask.any()
    e = np.exp(X)
    z = np.zeros(g.shape)
    H1, H2 = VectorField2(g, e, z), VectorField2(g, z, e)
    G, _ = log_beta_gradient(H1, H2, I_)
    assert np.abs(G.cx - 1)[1:-1, 1:-1].max() < 2e-3
    assert np.abs(G.cy).max() < 1e-12
    Gs, _ = log_beta_gradient(H1.scaled(3.7), H2.scaled(3.7), I_)
    np.testing.assert_allclose(Gs.cx, G.cx, rtol=1e-13)


def test_recover_beta_examples():
    g = Grid2D.square(16)
    zero = VectorField2(g, np.zeros(g.shape), np.zeros(g.shape))
    b = recover_beta(zero, BetaBC("dirichlet", values=np.ones(g.shape)))
    np.testing.assert_allclose(b.values, 1.0, atol=1e-14)
    X, _ = g.mesh()
    b = recover_beta(const_vec(g, 1, 0), BetaBC("anchor", point=(0, 0), value=1.0))
    np.testing.assert_allclose(np.log(b.values), X, atol=1e-12)
    with pytest.raises(ValueError):
        recover_beta(zero, BetaBC("anchor", point=(5, 5)))


def test_exp1_beta_with_true_anisotropy(exp1):
    truth, H = exp1
    G, mask = log_beta_gradient(H[0], H[1], truth.tilde())
    beta = recover_beta(G, BetaBC("dirichlet", values=truth.beta.values), mask)
    assert relative_l2_error(beta, truth.beta) <= 0.01


def test_betabc_validation():
    with pytest.raises(ValueError):
        BetaBC("dirichlet")
    with pytest.raises(ValueError):
        BetaBC("anchor", value=0.0)
    with pytest.raises(ValueError):
        BetaBC("robin")


# -- full pipeline -------------------------------------------------------------

def test_reconstruct_is_zero_homogeneous(exp1):
    truth, H = exp1
    opts = ReconOptions(beta_bc=BetaBC("anchor", point=(0, 0), value=1.8))
    a = reconstruct_full(H, opts)
    b = reconstruct_full(H.scaled(13.0), opts)
    for name in ("xi", "zeta", "beta"):
        np.testing.assert_allclose(getattr(b, name).values, getattr(a, name).values, rtol=1e-9, atol=1e-12)


def test_reconstruct_reports_errors(exp1):
    truth, H = exp1
    res = reconstruct_full(H, ReconOptions(beta_bc=BetaBC("dirichlet", values=truth.beta.values)), truth)
    rep = res.report
    assert set(rep.errors) == {"xi", "zeta", "beta"}
    assert rep.errors["beta"] <= 0.01 and rep.masked_fraction == 0.0
    assert rep.min_det_basis > 0 and rep.anchor_error < 1e-2
    assert isinstance(res.tensor(), SymTensor2Field)


def test_known_anisotropy_mode(exp1):
    truth, H = exp1
    opts = ReconOptions(beta_bc=BetaBC("dirichlet", values=truth.beta.values),
                        known_anisotropy=(truth.xi, truth.zeta))
    res = reconstruct_full(mset(H[0], H[1]), opts, truth)
    assert res.report.errors["xi"] == 0 and res.report.errors["beta"] <= 0.01


def test_reconstruct_needs_four_measurements(exp1):
    _, H = exp1
    with pytest.raises(ReconError):
        reconstruct_full(mset(H[0], H[1], H[2]))


def test_region_restricts_outputs():
    g = Grid2D.box(40, (-2, 2), (-2, 2))
    H, xi, _ = constant_gamma_data(g)
    res = reconstruct_full(H, ReconOptions(region=((-1, 1), (-1, 1))))
    assert res.xi.grid == g.subgrid((-1, 1), (-1, 1))
    np.testing.assert_allclose(res.xi.values, xi, rtol=1e-10)


def test_options_validation():
    with pytest.raises(ValueError):
        ReconOptions(basis=(1, 1))
    with pytest.raises(ValueError):
        ReconOptions(extra_pairs=[]).pairs_for(5)
    assert ReconOptions().pairs_for(5) == [(2, 3), (2, 4), (3, 4)]
