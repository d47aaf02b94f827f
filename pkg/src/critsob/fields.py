"""Domains, grids, scalar fields, quadrature and inner products.

Two discretizations are supported:

* :class:`RadialGrid` -- Chebyshev-Lobatto nodes on ``[0, R]`` for fields on a
  ball that are of the form ``F(r) * P_l(yhat . e_axis)`` around the center.
  The unknown used internally is ``s = r * F``, which vanishes at both ends.
  The stiffness matrix is the exact Galerkin matrix of the interpolating
  polynomial; masses use Clenshaw-Curtis weights. With this pairing the
  discrete Green identity ``h1_inner(u, v) == -integrate(v * laplacian(u))``
  holds to round-off.
* :class:`Grid3D` -- a uniform lattice over the bounding box of a domain with
  a 7-point stencil. Nodes outside the domain (or on its boundary) carry the
  Dirichlet value zero.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss
from scipy.special import eval_legendre

from .errors import DomainMismatch, InvalidExponent, LinearSolveFailure

FOUR_PI = 4.0 * np.pi


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------

def _as_points(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError("points must have a trailing dimension of size 3")
    return p


@dataclass(frozen=True, eq=False)
class UnitBall:
    """Ball of given radius (the name is historical; any radius works)."""

    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    kind = "ball"

    def boundary_distance(self, p):
        p = _as_points(p)
        return self.radius - np.linalg.norm(p - np.asarray(self.center), axis=-1)

    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    @property
    def key(self):
        return ("ball", self.radius, self.center)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``lower < y < upper``."""

    lower: tuple = (0.0, 0.0, 0.0)
    upper: tuple = (1.0, 1.0, 1.0)

    kind = "box"

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3 or not all(b > a for a, b in zip(lo, hi)):
            raise ValueError("box needs strictly positive edge lengths")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def boundary_distance(self, p):
        p = _as_points(p)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.minimum(p - lo, hi - p).min(axis=-1)

    def bounds(self):
        return np.asarray(self.lower), np.asarray(self.upper)

    @property
    def key(self):
        return ("box", self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class MaskedGrid:
    """Box with an inside predicate sampled on a lattice.

    ``inside`` is a boolean array of shape ``(nx, ny, nz)`` sampled on
    ``linspace(lower, upper, n)`` per axis.  If a signed distance function
    ``sdf`` (positive inside) is supplied it is used for boundary distances,
    otherwise the distance is estimated from the samples.
    """

    lower: tuple
    upper: tuple
    inside: np.ndarray
    sdf: Callable | None = None

    kind = "masked"

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        ins = np.asarray(self.inside, dtype=bool)
        if ins.ndim != 3:
            raise ValueError("inside samples must be a 3D array")
        object.__setattr__(self, "inside", ins)

    @classmethod
    def from_predicate(cls, lower, upper, shape, predicate, sdf=None):
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(lower, upper, shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lower, upper, predicate(pts), sdf)

    @classmethod
    def ball(cls, radius=1.0, n=33, pad=0.0):
        """Ball sampled on a lattice, with its exact signed distance attached."""
        ball = UnitBall(radius)
        lo = (-radius - pad,) * 3
        hi = (radius + pad,) * 3
        return cls.from_predicate(lo, hi, (n, n, n),
                                  lambda p: ball.boundary_distance(p) > 0,
                                  sdf=ball.boundary_distance)

    @functools.cached_property
    def _tree(self):
        from scipy.spatial import cKDTree
        axes = [np.linspace(lo, hi, n) for lo, hi, n in
                zip(self.lower, self.upper, self.inside.shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        h = min((hi - lo) / (n - 1) for lo, hi, n in
                zip(self.lower, self.upper, self.inside.shape))
        return (cKDTree(pts[~self.inside]), cKDTree(pts[self.inside]), h)

    def boundary_distance(self, p):
        p = _as_points(p)
        if self.sdf is not None:
            return np.asarray(self.sdf(p), dtype=float)
        out_tree, in_tree, h = self._tree
        flat = p.reshape(-1, 3)
        d_out, _ = out_tree.query(flat)
        d_in, _ = in_tree.query(flat)
        # the boundary sits halfway between an inside and an outside sample
        d = np.where(d_out > d_in, d_out - 0.5 * h, -(d_in - 0.5 * h))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        d = np.minimum(d, np.minimum(flat - lo, hi - flat).min(axis=-1))
        return d.reshape(p.shape[:-1])

    def bounds(self):
        return np.asarray(self.lower), np.asarray(self.upper)

    @property
    def key(self):
        return ("masked", self.lower, self.upper, self.inside.shape,
                hash(self.inside.tobytes()), id(self.sdf))


Domain = Union[UnitBall, Box, MaskedGrid]


# --------------------------------------------------------------------------
# radial grid
# --------------------------------------------------------------------------

def chebyshev_lobatto(n):
    """Nodes ``-cos(pi j / n)`` on [-1, 1] (increasing) and the
    differentiation matrix, built with the trigonometric difference formula."""
    j = np.arange(n + 1)
    theta = np.pi * j / n
    x = -np.cos(theta)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    # x_i - x_j = 2 sin((t_i + t_j)/2) sin((t_i - t_j)/2)
    ti, tj = np.meshgrid(theta, theta, indexing="ij")
    dx = 2.0 * np.sin(0.5 * (ti + tj)) * np.sin(0.5 * (ti - tj))
    np.fill_diagonal(dx, 1.0)
    D = np.outer(c, 1.0 / c) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return x, D


def clenshaw_curtis_weights(n):
    """Clenshaw-Curtis weights for the nodes of :func:`chebyshev_lobatto`."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    ii = np.arange(1, n)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
        v -= np.cos(n * theta[ii]) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
    w[ii] = 2.0 * v / n
    return w


def barycentric_matrix(xn, xt):
    """Interpolation matrix from Chebyshev-Lobatto nodes ``xn`` to ``xt``."""
    n = len(xn) - 1
    wb = (-1.0) ** np.arange(n + 1)
    wb[0] *= 0.5
    wb[-1] *= 0.5
    d = np.asarray(xt)[:, None] - xn[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    P = wb / d
    P /= P.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        P[rows] = exact[rows].astype(float)
    return P


class RadialGrid:
    """Chebyshev-Lobatto grid on ``[0, R]`` for fields centred in a ball.

    Attributes
    ----------
    r : ndarray
        Nodes ``0 = r_0 < ... < r_N = R``.
    w : ndarray
        Clenshaw-Curtis weights for ``int_0^R g(r) dr``.  The rule for
        ``int_0^R f(r) r^2 dr`` uses ``w * r**2`` and is exact for
        polynomial ``f`` of degree ``<= N - 2``.
    D : ndarray
        Collocation derivative matrix on the nodes.
    """

    def __init__(self, radius=1.0, n=256):
        if n < 4:
            raise ValueError("radial grid needs at least 4 intervals")
        self.radius = float(radius)
        self.n = int(n)
        self.domain = UnitBall(self.radius)
        x, D = chebyshev_lobatto(self.n)
        self.x = x
        self.r = self.radius * (x + 1.0) / 2.0
        self.r[0] = 0.0
        self.r[-1] = self.radius
        self.D = D * (2.0 / self.radius)
        self.w = clenshaw_curtis_weights(self.n) * (self.radius / 2.0)
        self.interior = slice(1, self.n)

    def __repr__(self):
        return f"RadialGrid(radius={self.radius}, n={self.n})"

    @property
    def key(self):
        return ("radial", self.radius, self.n)

    @property
    def coords(self):
        return self.r

    @property
    def degree(self):
        """Highest polynomial degree of ``f`` integrated exactly against r^2."""
        return self.n - 2

    @functools.cached_property
    def K1(self):
        # exact stiffness int s' t' dr for the degree-N interpolants
        xg, wg = leggauss(self.n + 1)
        PD = barycentric_matrix(self.x, xg) @ self.D
        K = PD.T @ ((wg * self.radius / 2.0)[:, None] * PD)
        return 0.5 * (K + K.T)

    def stiffness(self, l=0):
        """Full stiffness in ``s`` coordinates for angular order ``l``."""
        if l == 0:
            return self.K1
        return self._stiffness_l(l)

    @functools.lru_cache(maxsize=8)
    def _stiffness_l(self, l):
        K = self.K1.copy()
        I = self.interior
        idx = np.arange(1, self.n)
        K[idx, idx] += l * (l + 1) * self.w[I] / self.r[I] ** 2
        return K

    @functools.lru_cache(maxsize=8)
    def _cholesky(self, l):
        I = self.interior
        return sla.cho_factor(self.stiffness(l)[I, I])

    def solve_interior(self, rhs, l=0):
        """Solve ``K_l[I, I] s = rhs`` on interior unknowns."""
        return sla.cho_solve(self._cholesky(l), rhs)

    def profile_from_s(self, s, l=0):
        """Recover ``F = s / r`` including the center value."""
        F = np.zeros(self.n + 1)
        F[1:] = s[1:] / self.r[1:]
        F[0] = (self.D[0] @ s) if l == 0 else 0.0
        return F


# --------------------------------------------------------------------------
# 3D grid
# --------------------------------------------------------------------------

class _SparseSolver:
    """Direct factorization for small systems, smoothed-aggregation AMG
    otherwise."""

    direct_limit = 4000

    def __init__(self, A, symmetric=True, tol=1e-11):
        self.A = A.tocsr()
        self.symmetric = symmetric
        self.tol = tol
        if A.shape[0] <= self.direct_limit:
            self._lu = spla.splu(A.tocsc())
            self._ml = None
        else:
            import pyamg
            self._lu = None
            self._ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric" if symmetric else "nonsymmetric")

    def __call__(self, b):
        if self._lu is not None:
            x = self._lu.solve(np.asarray(b, dtype=float))
        else:
            res = []
            accel = "cg" if self.symmetric else "gmres"
            x = self._ml.solve(b, tol=self.tol, accel=accel, maxiter=400, residuals=res)
            bn = np.linalg.norm(b)
            if bn > 0 and res and res[-1] > 1e3 * self.tol * bn:
                raise LinearSolveFailure(f"AMG stalled at residual {res[-1] / bn:.2e}")
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("non-finite solution")
        return x


class Grid3D:
    """Uniform lattice over the bounding box of ``domain``.

    Parameters
    ----------
    domain : UnitBall, Box or MaskedGrid
    shape : int or 3-tuple
        Node counts per axis (endpoints included).
    """

    def __init__(self, domain, shape=97):
        if np.isscalar(shape):
            shape = (int(shape),) * 3
        self.shape = tuple(int(s) for s in shape)
        if any(s < 3 for s in self.shape):
            raise ValueError("need at least 3 nodes per axis")
        self.domain = domain
        lo, hi = domain.bounds()
        self.lower = np.asarray(lo, float)
        self.upper = np.asarray(hi, float)
        self.axes = [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.shape)]
        self.h = (self.upper - self.lower) / (np.asarray(self.shape) - 1)
        if not np.all(self.h > 0):
            raise ValueError("grid spacing must be positive")
        self.cell_volume = float(np.prod(self.h))
        self.mask = domain.boundary_distance(self.coords) > 0
        self.index = -np.ones(self.shape, dtype=np.int64)
        self.index[self.mask] = np.arange(int(self.mask.sum()))
        self.n_interior = int(self.mask.sum())

    def __repr__(self):
        return f"Grid3D({self.domain.kind}, shape={self.shape})"

    @property
    def key(self):
        return ("grid", self.domain.key, self.shape)

    @functools.cached_property
    def coords(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @functools.cached_property
    def weights(self):
        """Quadrature weights: trapezoid on boxes, cell volume on masked nodes."""
        if isinstance(self.domain, Box):
            ws = [np.full(n, h) for n, h in zip(self.shape, self.h)]
            for wa in ws:
                wa[0] *= 0.5
                wa[-1] *= 0.5
            return ws[0][:, None, None] * ws[1][None, :, None] * ws[2][None, None, :]
        return np.where(self.mask, self.cell_volume, 0.0)

    def nearest_interior_node(self, x):
        """Multi-index of the interior node closest to ``x``."""
        x = np.asarray(x, float)
        ijk = np.rint((x - self.lower) / self.h).astype(int)
        ijk = np.clip(ijk, 0, np.asarray(self.shape) - 1)
        if self.mask[tuple(ijk)]:
            return tuple(ijk)
        pts = self.coords[self.mask]
        k = np.argmin(np.linalg.norm(pts - x, axis=1))
        return tuple(np.argwhere(self.mask)[k])

    def neighbour_pairs(self, axis):
        """Index arrays of lattice edges along ``axis`` (start, end)."""
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[axis] = slice(0, -1)
        sl1[axis] = slice(1, None)
        return tuple(sl0), tuple(sl1)

    @functools.cached_property
    def stiffness(self):
        """Symmetric 7-point stiffness on interior nodes, scaled by cell volume
        so that ``u^T K v`` approximates ``int grad u . grad v``."""
        n = self.n_interior
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        for ax in range(3):
            c = self.cell_volume / self.h[ax] ** 2
            s0, s1 = self.neighbour_pairs(ax)
            i0 = self.index[s0].ravel()
            i1 = self.index[s1].ravel()
            for a, b in ((i0, i1), (i1, i0)):
                ok = a >= 0
                np.add.at(diag, a[ok], c)
                both = ok & (b >= 0)
                rows.append(a[both])
                cols.append(b[both])
                vals.append(np.full(both.sum(), -c))
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        return K

    @functools.cached_property
    def interior_weights(self):
        return self.weights[self.mask]

    @functools.cached_property
    def _poisson_solver(self):
        return _SparseSolver(self.stiffness)

    def solve_interior(self, rhs):
        return self._poisson_solver(rhs)

    def scatter(self, x):
        out = np.zeros(self.shape)
        out[self.mask] = x
        return out

    # exact sextic integral of the piecewise-linear interpolant ------------
    # The 7-point stiffness equals the P1 stiffness on the Kuhn subdivision
    # (six tetrahedra per cell), so integrating u^6 exactly on the same
    # tetrahedra makes the discrete quotient that of a genuine H^1_0 function.

    def _kuhn_vertices(self, u):
        nx, ny, nz = self.shape
        for perm in _KUHN_PERMS:
            corner = np.zeros(3, int)
            verts = [(0, 0, 0)]
            for ax in perm:
                corner[ax] = 1
                verts.append(tuple(corner))
            yield verts, [u[i:i + nx - 1, j:j + ny - 1, k:k + nz - 1] for i, j, k in verts]

    def p1_sextic(self, u):
        """``int u_h^6`` for the piecewise-linear interpolant of nodal ``u``."""
        u = np.asarray(u, float)
        tot = 0.0
        for _, vals in self._kuhn_vertices(u):
            tot += float(np.sum(_complete_homogeneous(vals, 6)[6]))
        return tot * self.cell_volume / (6.0 * 84.0)

    def p1_sextic_grad(self, u):
        """Gradient of :meth:`p1_sextic` with respect to the nodal values."""
        u = np.asarray(u, float)
        nx, ny, nz = self.shape
        out = np.zeros(self.shape)
        for verts, vals in self._kuhn_vertices(u):
            hs = _complete_homogeneous(vals, 5)
            for (i, j, k), xi in zip(verts, vals):
                # d h_6 / d x_i = sum_j x_i^j h_{5-j}
                d = hs[5].copy()
                p = np.ones_like(xi)
                for m in range(1, 6):
                    p = p * xi
                    d += p * hs[5 - m]
                out[i:i + nx - 1, j:j + ny - 1, k:k + nz - 1] += d
        return out * self.cell_volume / (6.0 * 84.0)


_KUHN_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def _complete_homogeneous(xs, kmax):
    """Complete homogeneous symmetric polynomials ``h_0..h_kmax`` of the
    arrays ``xs``, elementwise."""
    h = [np.ones_like(xs[0])] + [np.zeros_like(xs[0]) for _ in range(kmax)]
    for x in xs:
        # h_k <- sum_j x^j h_{k-j}, which is h_k + x * h_{k-1}(updated)
        for k in range(1, kmax + 1):
            h[k] = h[k] + x * h[k - 1]
    return h


Grid = Union[RadialGrid, Grid3D]


# --------------------------------------------------------------------------
# scalar fields
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on a grid.

    On a :class:`RadialGrid` the field is ``values(r) * P_l(yhat . e_axis)``,
    where ``P_l`` is the Legendre polynomial; ``l = 0`` is the radial case.
    On a :class:`Grid3D` ``values`` has the grid shape and ``l`` must be 0.
    """

    grid: Grid
    values: np.ndarray
    name: str = ""
    pole: np.ndarray | None = None
    l: int = 0
    axis: int = 2

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if isinstance(self.grid, RadialGrid):
            if v.shape != (self.grid.n + 1,):
                raise DomainMismatch(f"radial field needs {self.grid.n + 1} values, got {v.shape}")
        else:
            if v.shape != self.grid.shape:
                raise DomainMismatch(f"field shape {v.shape} != grid shape {self.grid.shape}")
            if self.l != 0:
                raise DomainMismatch("angular sectors exist only on radial grids")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"field {self.name!r} has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.pole is not None:
            object.__setattr__(self, "pole", np.asarray(self.pole, float))

    # construction --------------------------------------------------------
    @classmethod
    def from_function(cls, grid, fn, name="", **kw):
        """Sample ``fn`` on ``grid.coords`` (``r`` for radial grids, points of
        shape ``(nx, ny, nz, 3)`` otherwise)."""
        return cls(grid, np.broadcast_to(fn(grid.coords), _shape(grid)).copy(), name, **kw)

    @classmethod
    def constant(cls, grid, c, name=""):
        return cls(grid, np.full(_shape(grid), float(c)), name)

    @property
    def domain(self):
        return self.grid.domain

    @property
    def is_radial(self):
        return isinstance(self.grid, RadialGrid)

    def with_values(self, values, name=None):
        return ScalarField(self.grid, values, self.name if name is None else name,
                           self.pole, self.l, self.axis)

    def zero_boundary(self):
        """Copy with exact zeros at boundary / exterior nodes."""
        v = np.array(self.values)
        if self.is_radial:
            v[-1] = 0.0
        else:
            v[~self.grid.mask] = 0.0
        return self.with_values(v)

    # arithmetic ----------------------------------------------------------
    def _sector(self):
        return (self.l, self.axis if self.l else None)

    def _combine(self, other, op, multiplicative=False):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            if multiplicative:
                if self.l and other.l:
                    raise DomainMismatch("product of two non-radial sectors is not representable")
                src = self if self.l else other
                return ScalarField(self.grid, op(self.values, other.values), "", None, src.l, src.axis)
            if self._sector() != other._sector():
                raise DomainMismatch("cannot add fields from different angular sectors")
            return self.with_values(op(self.values, other.values), "")
        return self.with_values(op(self.values, other), "")

    def __add__(self, o):
        return self._combine(o, np.add)

    __radd__ = __add__

    def __sub__(self, o):
        return self._combine(o, np.subtract)

    def __rsub__(self, o):
        return self._combine(o, lambda a, b: b - a)

    def __mul__(self, o):
        return self._combine(o, np.multiply, multiplicative=True)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if isinstance(c, ScalarField):
            raise TypeError("division by a field is not supported")
        return self.with_values(self.values / c, "")

    def __neg__(self):
        return self.with_values(-self.values, "")

    def __pow__(self, p):
        if self.l:
            raise DomainMismatch("powers of non-radial sectors are not representable")
        return self.with_values(self.values ** p, "")

    def __abs__(self):
        if self.l:
            raise DomainMismatch("abs of a non-radial sector is not representable")
        return self.with_values(np.abs(self.values), "")


def _shape(grid):
    return (grid.n + 1,) if isinstance(grid, RadialGrid) else grid.shape


def _check_same_grid(u, v):
    if u.grid is v.grid:
        return
    if u.grid.key != v.grid.key:
        raise DomainMismatch(f"{u.grid!r} vs {v.grid!r}")


def sample(grid, spec, name=""):
    """Turn a constant, callable, array or field into a field on ``grid``."""
    if isinstance(spec, ScalarField):
        _check_same_grid(spec, ScalarField.constant(grid, 0.0))
        return spec
    if callable(spec):
        return ScalarField.from_function(grid, spec, name)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return ScalarField.constant(grid, float(arr), name)
    return ScalarField(grid, arr, name)


def _angular_overlap(u, v):
    """int_S2 P_l(yhat.e_u) P_m(yhat.e_v) dOmega, by the addition theorem."""
    if u.l != v.l:
        return 0.0
    cos = 1.0 if (u.l == 0 or u.axis == v.axis) else 0.0
    return FOUR_PI / (2 * u.l + 1) * float(eval_legendre(u.l, cos))


@functools.lru_cache(maxsize=64)
def _angular_abs_moment(l, p):
    """int_S2 |P_l(cos theta)|^p dOmega."""
    from scipy.integrate import quad
    if l == 0:
        return FOUR_PI
    roots = np.sort(np.polynomial.legendre.legroots([0] * l + [1]))
    pts = np.concatenate([[-1.0], roots, [1.0]])
    tot = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        tot += quad(lambda t: abs(eval_legendre(l, t)) ** p, a, b, epsabs=1e-14, epsrel=1e-13)[0]
    return 2 * np.pi * tot


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def sextic_integral(u):
    """``int u^6`` as used by the Sobolev quotient: the radial rule, or the
    exact integral of the piecewise-linear interpolant on lattices."""
    if isinstance(u.grid, RadialGrid):
        return integrate(u ** 6)
    return u.grid.p1_sextic(u.values)


def integrate(f):
    """Quadrature approximation of ``int_Omega f dy``."""
    if not isinstance(f, ScalarField):
        raise TypeError("integrate expects a ScalarField")
    g = f.grid
    if isinstance(g, RadialGrid):
        if f.l:
            return 0.0
        return FOUR_PI * float(np.sum(g.w * g.r ** 2 * f.values))
    return float(np.sum(g.weights * f.values))


def l2_inner(u, v, weight=None):
    """``int_Omega weight * u * v dy``; ``weight`` must be radial (l = 0)."""
    _check_same_grid(u, v)
    g = u.grid
    wv = 1.0 if weight is None else sample(g, weight).values
    if isinstance(g, RadialGrid):
        ang = _angular_overlap(u, v)
        if ang == 0.0:
            return 0.0
        return ang * float(np.sum(g.w * g.r ** 2 * wv * u.values * v.values))
    return float(np.sum(g.weights * wv * u.values * v.values))


def _dofs(u):
    g = u.grid
    if isinstance(g, RadialGrid):
        return (g.r * u.values)[g.interior]
    return u.values[g.mask]


def h1_inner(u, v):
    """Discrete ``int grad u . grad v``.

    Boundary and exterior values are treated as zero; the stiffness is the
    same one used by :func:`solve_poisson` and :func:`laplacian`.
    """
    _check_same_grid(u, v)
    g = u.grid
    if isinstance(g, RadialGrid):
        ang = _angular_overlap(u, v)
        if ang == 0.0:
            return 0.0
        I = g.interior
        K = g.stiffness(u.l)[I, I]
        return ang * float(_dofs(u) @ (K @ _dofs(v)))
    return float(_dofs(u) @ (g.stiffness @ _dofs(v)))


def lp_norm(f, p):
    """``(int |f|^p)^(1/p)``; ``p = inf`` gives the max of ``|values|``."""
    p = float(p)
    if not p >= 1.0:
        raise InvalidExponent(f"p must be in [1, inf], got {p}")
    g = f.grid
    if np.isinf(p):
        return float(np.max(np.abs(f.values)))
    if isinstance(g, RadialGrid):
        ang = _angular_abs_moment(f.l, p)
        return float((ang * np.sum(g.w * g.r ** 2 * np.abs(f.values) ** p)) ** (1.0 / p))
    return float(np.sum(g.weights * np.abs(f.values) ** p) ** (1.0 / p))


def laplacian(u):
    """Discrete Laplacian adjoint to :func:`h1_inner` under :func:`integrate`."""
    g = u.grid
    if isinstance(g, RadialGrid):
        s = g.r * u.values
        s[-1] = 0.0
        Ks = g.stiffness(u.l) @ s
        out = np.zeros(g.n + 1)
        out[1:] = -Ks[1:] / (g.w[1:] * g.r[1:])
        # center value from the collocation limit s''' (0) (radial case only)
        if u.l == 0:
            out[0] = g.D[0] @ (g.D @ (g.D @ s))
        return u.with_values(out, "laplacian")
    x = _dofs(u)
    return u.with_values(g.scatter(-(g.stiffness @ x) / g.interior_weights), "laplacian")


def solve_poisson(f, name=""):
    """Solve ``-Laplace u = f`` with ``u = 0`` on the boundary.

    The right side is tested against the nodal (lumped) quadrature, so the
    result satisfies ``h1_inner(u, v) = l2_inner(f, v)`` for every discrete
    ``v`` exactly.
    """
    g = f.grid
    if isinstance(g, RadialGrid):
        I = g.interior
        rhs = (g.w * g.r * f.values)[I]
        s = np.zeros(g.n + 1)
        s[I] = g.solve_interior(rhs, f.l)
        vals = g.profile_from_s(s, f.l)
        if f.l == 0:
            # u(0) = int_0^R f r (1 - r/R) dr, the same weak form tested with
            # a function that does not vanish at the center; this avoids
            # differentiating s at the endpoint
            vals[0] = float(np.sum(g.w * g.r * f.values * (1.0 - g.r / g.radius)))
        return ScalarField(g, vals, name, None, f.l, f.axis)
    rhs = g.interior_weights * f.values[g.mask]
    return ScalarField(g, g.scatter(g.solve_interior(rhs)), name)


# --------------------------------------------------------------------------
# degrees of freedom
# --------------------------------------------------------------------------

@dataclass
class DofSpace:
    """Coordinates in which the discrete quadratic forms are explicit.

    For a field with coordinates ``x``: ``int |grad u|^2 = x^T K x``,
    ``int b u^2 = sum(mass * b * x^2)`` and ``int u^6 = sixth(x)``
    (``sum(sextic * x^6)`` in the radial sector, exact P1 on lattices).
    """

    grid: Grid
    l: int
    axis: int
    K: object
    mass: np.ndarray
    sextic: np.ndarray | None
    coords: np.ndarray = field(repr=False)

    def to_dofs(self, u):
        _check_same_grid(u, ScalarField.constant(self.grid, 0.0))
        return _dofs(u)

    def from_dofs(self, x, name=""):
        g = self.grid
        if isinstance(g, RadialGrid):
            s = np.zeros(g.n + 1)
            s[g.interior] = x
            return ScalarField(g, g.profile_from_s(s, self.l), name, None, self.l, self.axis)
        return ScalarField(g, g.scatter(x), name)

    def sixth(self, x):
        if self.sextic is not None:
            return float(np.sum(self.sextic * x ** 6))
        return self.grid.p1_sextic(self.grid.scatter(x))

    def sixth_grad(self, x):
        if self.sextic is not None:
            return 6.0 * self.sextic * x ** 5
        return self.grid.p1_sextic_grad(self.grid.scatter(x))[self.grid.mask]

    def solve(self, rhs):
        """Apply ``K^{-1}``."""
        g = self.grid
        if isinstance(g, RadialGrid):
            return g.solve_interior(rhs, self.l) / _angular_overlap_self(self.l)
        return g.solve_interior(rhs)

    def restrict(self, f):
        """Nodal values of a radial weight at the dof locations."""
        return sample(self.grid, f).values[self._sel]

    @property
    def _sel(self):
        g = self.grid
        return g.interior if isinstance(g, RadialGrid) else g.mask


def _angular_overlap_self(l):
    return FOUR_PI / (2 * l + 1)


def dof_space(grid, l=0, axis=2):
    if isinstance(grid, RadialGrid):
        I = grid.interior
        c = _angular_overlap_self(l)
        r = grid.r[I]
        w = grid.w[I]
        sextic = c * w / r ** 4 if l == 0 else None
        return DofSpace(grid, l, axis, c * grid.stiffness(l)[I, I], c * w, sextic, r)
    if l:
        raise DomainMismatch("angular sectors exist only on radial grids")
    wi = grid.interior_weights
    return DofSpace(grid, 0, axis, grid.stiffness, wi, None, grid.coords[grid.mask])
