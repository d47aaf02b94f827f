import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critsob import (BubbleParams, Box, DomainMismatch, Grid3D, InvalidExponent, MaskedGrid,
                     RadialGrid, ScalarField, UnitBall, h1_inner, integrate, l2_inner,
                     laplacian, lp_norm, solve_poisson, u_bubble)
from critsob.fields import (barycentric_matrix, chebyshev_lobatto, clenshaw_curtis_weights,
                            dof_space, sextic_integral)


# domains -------------------------------------------------------------------

def test_ball_and_box_validation():
    with pytest.raises(ValueError):
        UnitBall(0.0)
    with pytest.raises(ValueError):
        Box((0, 0, 0), (1, 0, 1))
    assert UnitBall(2.0).boundary_distance(np.zeros(3)) == pytest.approx(2.0)
    assert Box().boundary_distance(np.array([0.5, 0.25, 0.5])) == pytest.approx(0.25)


def test_grid_mask_matches_boundary_distance():
    for dom in (UnitBall(), Box((0, 0, 0), (1, 2, 1)), MaskedGrid.ball(1.0, 17)):
        g = Grid3D(dom, 13)
        assert np.array_equal(g.mask, dom.boundary_distance(g.coords) > 0)
        assert np.all(g.h > 0)
        assert g.n_interior == int(g.mask.sum())


def test_masked_grid_distance_estimate_without_sdf():
    ball = UnitBall()
    dom = MaskedGrid.from_predicate((-1.2,) * 3, (1.2,) * 3, (49,) * 3,
                                    lambda p: ball.boundary_distance(p) > 0)
    pts = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.3, 0.4]])
    h = 2.4 / 48
    assert np.allclose(dom.boundary_distance(pts), ball.boundary_distance(pts), atol=h)


# radial grid ---------------------------------------------------------------

def test_chebyshev_differentiation_and_weights():
    x, D = chebyshev_lobatto(16)
    assert np.all(np.diff(x) > 0)
    assert np.allclose(D @ x ** 5, 5 * x ** 4, atol=1e-11)
    w = clenshaw_curtis_weights(16)
    for k in range(0, 16):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert np.sum(w * x ** k) == pytest.approx(exact, abs=1e-13)


def test_barycentric_interpolates_polynomials():
    x, _ = chebyshev_lobatto(12)
    xt = np.linspace(-1, 1, 7)
    P = barycentric_matrix(x, xt)
    assert np.allclose(P @ (x ** 7 - x ** 2), xt ** 7 - xt ** 2, atol=1e-12)


def test_radial_nodes_and_monomial_exactness():
    g = RadialGrid(1.5, 32)
    assert g.r[0] == 0.0 and g.r[-1] == 1.5
    assert np.all(np.diff(g.r) > 0)
    for k in range(g.degree + 1):
        exact = 1.5 ** (k + 3) / (k + 3)
        assert np.sum(g.w * g.r ** 2 * g.r ** k) == pytest.approx(exact, rel=1e-12)


def test_integrate_examples(grid256):
    assert integrate(ScalarField.constant(grid256, 1.0)) == pytest.approx(4 * math.pi / 3, rel=1e-13)
    assert integrate(ScalarField.constant(grid256, 0.0)) == 0.0
    U = u_bubble(BubbleParams((0, 0, 0), 50.0), grid256)
    assert integrate(U ** 6) == pytest.approx(math.pi ** 2 / 4, abs=1e-4)


def _ball_grad_energy(lam):
    from scipy.integrate import quad
    f = lambda r: 4 * math.pi * lam ** 5 * r ** 4 * (1 + lam * lam * r * r) ** -3
    return quad(f, 0, 1, points=[1 / lam, 10 / lam], limit=400, epsabs=1e-14)[0]


def test_h1_bubble_minus_boundary_value_matches_quadrature(grid256):
    # U - U(R) vanishes on the sphere and has the gradient of U
    lam = 50.0
    U = u_bubble(BubbleParams((0, 0, 0), lam), grid256)
    W = U - U.values[-1]
    exact = _ball_grad_energy(lam)
    assert h1_inner(W, W) == pytest.approx(exact, abs=1e-8)
    # the tail outside the ball is 4 pi / lam to leading order
    assert 3 * math.pi ** 2 / 4 - exact == pytest.approx(4 * math.pi / lam, rel=0.01)


@pytest.mark.xfail(strict=True, reason="the 3 pi^2/4 value is the whole-space energy; "
                                       "the ball misses a 4 pi/lam tail (0.25 at lam=50)")
def test_h1_example_restricted_bubble_whole_space_value(grid256):
    U = u_bubble(BubbleParams((0, 0, 0), 50.0), grid256).zero_boundary()
    assert h1_inner(U, U) == pytest.approx(3 * math.pi ** 2 / 4, abs=1e-3)


def test_h1_examples(grid256):
    U = u_bubble(BubbleParams((0, 0, 0), 50.0), grid256)
    V = ScalarField.from_function(grid256, lambda r: np.cos(r) * (1 - r * r))
    assert h1_inner(U, V) == pytest.approx(h1_inner(V, U), rel=1e-14)
    assert h1_inner(V, V) > 0
    assert h1_inner(ScalarField.constant(grid256, 0.0), V) == 0.0


def test_lp_norm_examples(grid256):
    c = ScalarField.constant(grid256, -2.5)
    assert lp_norm(c, 2) == pytest.approx(2.5 * math.sqrt(4 * math.pi / 3), rel=1e-13)
    assert lp_norm(ScalarField.constant(grid256, -3.0), math.inf) == 3.0
    U = u_bubble(BubbleParams((0, 0, 0), 50.0), grid256)
    assert lp_norm(U, 6) == pytest.approx((math.pi ** 2 / 4) ** (1 / 6), abs=1e-4)
    with pytest.raises(InvalidExponent):
        lp_norm(c, 0.5)


def test_field_shape_mismatch_is_domain_error(grid256):
    with pytest.raises(DomainMismatch):
        ScalarField(grid256, np.zeros(10))
    other = RadialGrid(1.0, 64)
    with pytest.raises(DomainMismatch):
        h1_inner(ScalarField.constant(grid256, 1.0), ScalarField.constant(other, 1.0))
    with pytest.raises(DomainMismatch):
        l2_inner(ScalarField.constant(grid256, 1.0), ScalarField.constant(other, 1.0))


def test_fields_are_immutable(grid256):
    f = ScalarField.constant(grid256, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_radial_quadrature_converges_spectrally():
    exact = 4 * math.pi * (math.sqrt(math.pi) / 4 * math.erf(1.0) - 0.5 / math.e)
    errs = []
    for n in (8, 16, 32):
        g = RadialGrid(1.0, n)
        errs.append(abs(integrate(ScalarField.from_function(g, lambda r: np.exp(-r * r))) - exact))
    assert errs[1] < 1e-6 * errs[0] + 1e-14 and errs[2] < 1e-13


def test_grid_quadrature_second_order_on_box():
    # int over (-1,1)^3 of exp(-|y|^2) = (sqrt(pi) erf(1))^3
    exact = (math.sqrt(math.pi) * math.erf(1.0)) ** 3
    errs = []
    for n in (9, 17, 33):
        g = Grid3D(Box((-1, -1, -1), (1, 1, 1)), n)
        f = ScalarField.from_function(g, lambda p: np.exp(-np.sum(p * p, axis=-1)))
        errs.append(abs(integrate(f) - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_discrete_green_identity_radial(grid256):
    u = ScalarField.from_function(grid256, lambda r: np.sin(np.pi * r) / (1 + r))
    v = ScalarField.from_function(grid256, lambda r: (1 - r ** 2) * np.exp(r))
    assert h1_inner(u, v) == pytest.approx(-integrate(v * laplacian(u)), rel=1e-12)


def test_discrete_green_identity_grid():
    g = Grid3D(Box(), 11)
    rng = np.random.default_rng(3)
    u = ScalarField(g, g.scatter(rng.standard_normal(g.n_interior)))
    v = ScalarField(g, g.scatter(rng.standard_normal(g.n_interior)))
    assert h1_inner(u, v) == pytest.approx(-integrate(v * laplacian(u)), rel=1e-12)


def test_poisson_solve_radial_manufactured(grid256):
    # -Lap u = f with u = 1 - r^2  ->  f = 6
    u = solve_poisson(ScalarField.constant(grid256, 6.0))
    assert np.allclose(u.values, 1 - grid256.r ** 2, atol=1e-12)


def test_poisson_solve_grid_second_order():
    errs = []
    for n in (9, 17, 33):
        g = Grid3D(Box(), n)
        X = g.coords
        exact = np.prod(np.sin(np.pi * X), axis=-1)
        u = solve_poisson(ScalarField(g, 3 * np.pi ** 2 * exact))
        errs.append(np.max(np.abs(u.values - exact)))
    assert np.log2(errs[1] / errs[2]) > 1.8


def test_p1_sextic_is_exact_for_linear_fields():
    g = Grid3D(Box((0, 0, 0), (1, 2, 1)), (5, 7, 6))
    assert g.p1_sextic(np.ones(g.shape)) == pytest.approx(2.0, rel=1e-14)
    X = g.coords
    u = X[..., 0] + 2 * X[..., 1] - X[..., 2]
    # int over the box of (x + 2y - z)^6, by expanding in one variable at a time
    from numpy.polynomial import polynomial as P
    xs = np.polynomial.legendre.leggauss(8)
    nodes, w = xs
    pts = [(nodes + 1) / 2, nodes + 1, (nodes + 1) / 2]
    wts = [w / 2, w, w / 2]
    vals = (pts[0][:, None, None] + 2 * pts[1][None, :, None] - pts[2][None, None, :]) ** 6
    exact = np.einsum("i,j,k,ijk->", *wts, vals)
    assert g.p1_sextic(u) == pytest.approx(exact, rel=1e-13)


def test_p1_sextic_gradient_matches_finite_differences():
    g = Grid3D(Box(), 6)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(g.shape)
    d = rng.standard_normal(g.shape)
    e = 1e-6
    fd = (g.p1_sextic(u + e * d) - g.p1_sextic(u - e * d)) / (2 * e)
    assert np.sum(g.p1_sextic_grad(u) * d) == pytest.approx(fd, rel=1e-7)


def test_stiffness_is_p1_on_kuhn_tetrahedra():
    g = Grid3D(Box((0, 0, 0), (1, 2, 1)), (5, 7, 6))
    rng = np.random.default_rng(5)
    x = rng.standard_normal(g.n_interior)
    U = g.scatter(x)
    nx, ny, nz = g.shape
    energy = 0.0
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        c = np.zeros(3, int)
        vs = [(0, 0, 0)]
        for ax in perm:
            c[ax] = 1
            vs.append(tuple(c))
        vals = [U[i:i + nx - 1, j:j + ny - 1, k:k + nz - 1] for i, j, k in vs]
        grad2 = sum(((vals[m + 1] - vals[m]) / g.h[perm[m]]) ** 2 for m in range(3))
        energy += np.sum(grad2) * g.cell_volume / 6
    assert x @ (dof_space(g).K @ x) == pytest.approx(energy, rel=1e-13)


def test_sextic_integral_radial_matches_integrate(grid256):
    U = u_bubble(BubbleParams((0, 0, 0), 30.0), grid256)
    assert sextic_integral(U) == integrate(U ** 6)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(c=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3), p=st.sampled_from([1, 1.5, 2, 6, math.inf]))
def test_lp_norm_scaling(c, p):
    g = RadialGrid(1.0, 32)
    f = ScalarField.from_function(g, lambda r: np.cos(3 * r) + 0.5)
    assert lp_norm(c * f, p) == pytest.approx(abs(c) * lp_norm(f, p), rel=1e-12)


@settings(max_examples=20, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_h1_inner_positive_definite(seed):
    g = Grid3D(Box(), 7)
    x = np.random.default_rng(seed).standard_normal(g.n_interior)
    u = ScalarField(g, g.scatter(x))
    assert h1_inner(u, u) > 0
