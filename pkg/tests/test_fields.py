import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdii.fields import (Grid2D, GridError, ScalarField2, SymTensor2Field, VectorField2, cross_section,
                         curl2, divergence, gradient, sliding_average)
from cdii.synth import make_phantom


def grid(n=20):
    return Grid2D.square(n)


def test_grid_invariants():
    g = Grid2D.square(80)
    assert g.shape == (81, 81)
    assert g.h == pytest.approx(0.025)
    assert g.x[0] == -1 and g.x[-1] == pytest.approx(1.0)
    with pytest.raises(GridError):
        Grid2D(2, 5, 0.1)
    with pytest.raises(GridError):
        Grid2D(5, 5, 0.0)


def test_field_rejects_nonfinite_and_wrong_shape():
    g = grid(4)
    with pytest.raises(ValueError):
        ScalarField2(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        ScalarField2(g, np.zeros((3, 3)))


def test_gradient_constant_and_linear():
    g = grid(7)
    G = gradient(ScalarField2.constant(g, 3.5))
    assert np.all(G.cx == 0) and np.all(G.cy == 0)
    G = gradient(ScalarField2.from_function(g, lambda x, y: x))
    np.testing.assert_allclose(G.cx, 1.0, atol=1e-13)
    np.testing.assert_allclose(G.cy, 0.0, atol=1e-13)


def test_gradient_quadratic_interior_exact():
    g = Grid2D(7, 7, 0.5, -1.5, -1.5)
    X, _ = g.mesh()
    G = gradient(ScalarField2.from_function(g, lambda x, y: x**2))
    np.testing.assert_allclose(G.cx[1:-1, 1:-1], 2 * X[1:-1, 1:-1], atol=1e-13)


def test_gradient_quadratic_edges_exact():
    # one-sided second-order stencils are exact on quadratics too
    g = Grid2D(6, 5, 0.5)
    X, Y = g.mesh()
    G = gradient(ScalarField2.from_function(g, lambda x, y: x**2 + x * y))
    np.testing.assert_allclose(G.cx, 2 * X + Y, atol=1e-12)
    np.testing.assert_allclose(G.cy, X, atol=1e-12)


def test_divergence_examples():
    g = grid(9)
    X, Y = g.mesh()
    c = divergence(VectorField2(g, np.full(g.shape, 2.0), np.full(g.shape, -1.0)))
    assert np.all(c.values == 0)
    np.testing.assert_allclose(divergence(VectorField2(g, X, Y)).values, 2.0, atol=1e-12)
    d = divergence(VectorField2(g, X**2, np.zeros(g.shape)))
    np.testing.assert_allclose(d.values[1:-1, 1:-1], 2 * X[1:-1, 1:-1], atol=1e-12)


def test_curl_examples():
    g = grid(16)
    X, Y = g.mesh()
    np.testing.assert_allclose(curl2(VectorField2(g, -Y, X)).values, 2.0, atol=1e-12)
    lin = ScalarField2.from_function(g, lambda x, y: 3 * x - 2 * y + 1)
    np.testing.assert_allclose(curl2(gradient(lin)).values, 0.0, atol=1e-12)
    e = curl2(VectorField2(g, np.zeros(g.shape), np.exp(X)))
    assert np.abs(e.values - np.exp(X))[1:-1, 1:-1].max() < 0.01


def test_curl_of_gradient_vanishes_on_smooth_fields():
    # the difference stencils along x and y commute, so this holds to roundoff
    for n in (16, 32, 64):
        f = ScalarField2.from_function(grid(n), lambda x, y: np.sin(2 * x) * np.exp(y))
        assert np.abs(curl2(gradient(f)).values).max() < 1e-10


def test_gradient_order():
    errs = []
    for n in (16, 32, 64):
        g = grid(n)
        X, Y = g.mesh()
        G = gradient(ScalarField2(g, np.sin(np.pi * X) * np.sin(np.pi * Y)))
        exact = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        errs.append(np.abs(G.cx - exact)[1:-1, 1:-1].max())
    assert errs[0] / errs[1] >= 3.6 and errs[1] / errs[2] >= 3.6


def test_sliding_average_examples():
    g = Grid2D(5, 5, 1.0)
    c = ScalarField2.constant(g, 2.5)
    np.testing.assert_allclose(sliding_average(c, 3).values, 2.5)
    r = np.random.default_rng(0).normal(size=g.shape)
    f = ScalarField2(g, r)
    np.testing.assert_array_equal(sliding_average(f, 0).values, r)
    imp = np.zeros(g.shape)
    imp[2, 2] = 1.0
    s = sliding_average(ScalarField2(g, imp), 1).values
    assert s[2, 2] == pytest.approx(0.2)
    for j, i in ((1, 2), (3, 2), (2, 1), (2, 3)):
        assert s[j, i] == pytest.approx(0.2)
    assert s.sum() == pytest.approx(1.0)


def test_sliding_average_mean_on_interior_support():
    g = Grid2D(20, 20, 1.0)
    a = np.zeros(g.shape)
    a[5:15, 5:15] = np.random.default_rng(1).uniform(size=(10, 10))
    s = sliding_average(ScalarField2(g, a), 1).values
    assert s.mean() == pytest.approx(a.mean(), rel=1e-12)


def test_sliding_average_negative_passes():
    with pytest.raises(ValueError):
        sliding_average(ScalarField2.constant(grid(4), 1.0), -1)


def test_cross_section():
    g = grid(10)
    s = cross_section(ScalarField2.from_function(g, lambda x, y: x), "y", 0.0)
    np.testing.assert_allclose(s.values, s.abscissa)
    s = cross_section(ScalarField2.constant(g, 4.0), "x", 0.33)
    assert s.coordinate == pytest.approx(0.4)
    assert np.all(s.values == 4.0)
    with pytest.raises(ValueError):
        cross_section(ScalarField2.constant(g, 1.0), "y", 5.0)


def test_cross_section_exp1_xi_is_two_on_y0():
    g = Grid2D.square(80)
    s = cross_section(make_phantom("exp1_smooth", g).xi, "y", 0.0)
    np.testing.assert_allclose(s.values, 2.0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 5))
def test_tilde_has_unit_determinant(xi, zeta, beta):
    g = Grid2D(3, 3, 1.0)
    t = SymTensor2Field.from_arrays(g, np.full(g.shape, xi), np.full(g.shape, zeta), np.full(g.shape, beta))
    np.testing.assert_allclose(t.tilde().det(), 1.0, rtol=1e-12)
    np.testing.assert_allclose(t.tensor().det(), beta**2, rtol=1e-12)
    assert t.kappa() >= 1.0


def test_symtensor_rejects_nonpositive():
    g = Grid2D(3, 3, 1.0)
    with pytest.raises(ValueError):
        SymTensor2Field.from_arrays(g, np.zeros(g.shape), np.zeros(g.shape), np.ones(g.shape))
    with pytest.raises(ValueError):
        SymTensor2Field.from_arrays(g, np.ones(g.shape), np.zeros(g.shape), -np.ones(g.shape))
