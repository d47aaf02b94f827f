"""Green's functions of ``-Laplace + a`` with Dirichlet data, their regular
parts, the Robin function and the quadratic functional ``int V G^2``.

Normalization: ``(-Laplace + a) G(x, .) = 4 pi delta_x`` and
``G(x, y) = 1/|x - y| - H(x, y)``; the Robin function is ``phi(x) = H(x, x)``.
"""
from __future__ import annotations

import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DomainMismatch, EmptyZeroSet, LinearSolveFailure,
                     NonCoercive, ShootingFailure)
from .fields import (Box, Grid3D, RadialGrid, ScalarField, UnitBall,
                     _check_same_grid, _SparseSolver, sample)

log = logging.getLogger(__name__)

RADIAL_ZERO_TOL = 1e-6
GRID_ZERO_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class GreensData:
    """Regular part and Robin value for a single pole.

    ``H`` is stored on the grid; the singular part ``1/|x-y|`` is implicit.
    ``solver`` is ``"RadialShooting"`` or ``"GridFD"``.
    """

    pole: np.ndarray
    H: ScalarField
    phi: float
    solver: str
    residual_norm: float
    a: ScalarField | None = None
    info: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.H.grid

    def distance(self):
        """``|y - x|`` at every node."""
        g = self.grid
        if isinstance(g, RadialGrid):
            return g.r.copy()
        return np.linalg.norm(g.coords - self.pole, axis=-1)

    def green_values(self):
        """``G(x, y)`` at the nodes; ``+inf`` at the pole node."""
        rho = self.distance()
        with np.errstate(divide="ignore"):
            G = 1.0 / rho - self.H.values
        G[rho == 0] = np.inf
        return G

    def green_profile(self):
        """Radial case: ``g(r) = r G(0, r)``, smooth with ``g(0) = 1``."""
        g = self.grid
        if not isinstance(g, RadialGrid):
            raise DomainMismatch("green_profile needs a radial solve")
        return 1.0 - g.r * self.H.values

    def green_at(self, r):
        """Radial case: evaluate ``G(0, r)`` off the nodes by interpolation."""
        from .fields import barycentric_matrix
        g = self.grid
        r = np.atleast_1d(np.asarray(r, float))
        P = barycentric_matrix(g.x, 2.0 * r / g.radius - 1.0)
        return (P @ self.green_profile()) / r


# --------------------------------------------------------------------------
# radial solver
# --------------------------------------------------------------------------

def radial_lowest_eigenvalue(grid, a_vals):
    """Lowest Dirichlet eigenvalue of ``-Laplace + a`` restricted to radial
    functions on the ball (which is the global one for radial ``a``)."""
    I = grid.interior
    A = grid.K1[I, I] + np.diag(grid.w[I] * a_vals[I])
    B = np.diag(grid.w[I])
    ev = sla.eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])
    return float(ev[0])


def solve_greens_radial(a, R=1.0, *, grid=None, n=256, check=True):
    """Green's function with pole at the center of a ball for radial ``a``.

    Writes ``G(0, y) = g(r)/r`` with ``-g'' + a g = 0``, ``g(0) = 1``,
    ``g(R) = 0`` and solves this two-point problem spectrally on the
    Chebyshev grid.

    Parameters
    ----------
    a : float, callable of r, array or ScalarField
        Radial potential.
    R : float
        Ball radius (ignored if ``grid`` is given).
    """
    grid = grid or RadialGrid(R, n)
    R = grid.radius
    af = sample(grid, a, "a")
    av = af.values
    if check:
        mu = radial_lowest_eigenvalue(grid, av)
        if mu <= 0:
            raise NonCoercive(f"lowest Dirichlet eigenvalue {mu:.6g} <= 0")
    I = grid.interior
    r = grid.r
    lin = 1.0 - r / R
    A = grid.K1[I, I] + np.diag(grid.w[I] * av[I])
    v = np.zeros(grid.n + 1)
    try:
        v[I] = sla.solve(A, -(grid.w * av * lin)[I], assume_a="sym")
    except sla.LinAlgError as exc:
        raise ShootingFailure(str(exc)) from exc
    g = lin + v
    if not np.all(np.isfinite(g)):
        raise ShootingFailure("non-finite profile")
    # variational identity phi = -g'(0) = 1/R + int a g (1 - r/R) dr; it
    # avoids differentiating at the endpoint
    phi = 1.0 / R + float(np.sum(grid.w * av * g * lin))
    H = np.empty(grid.n + 1)
    H[1:] = 1.0 / R - v[1:] / r[1:]
    H[0] = phi
    g2 = grid.D @ (grid.D @ g)
    resid = float(np.max(np.abs(-g2[I] + av[I] * g[I])))
    if resid > 1e-4 * (1.0 + np.max(np.abs(av))) * max(1.0, grid.n / 256) ** 4:
        raise ShootingFailure(f"ODE defect {resid:.3g} too large")
    Hf = ScalarField(grid, H, "H", pole=np.zeros(3))
    return GreensData(np.zeros(3), Hf, phi, "RadialShooting", resid, af)


# --------------------------------------------------------------------------
# grid solver
# --------------------------------------------------------------------------

def _crossings(domain, p, e, h):
    """Fraction t in (0, 1] with ``p + t h e`` on the boundary, per row."""
    if isinstance(domain, UnitBall):
        c = np.asarray(domain.center)
        q = p - c
        b = q @ e
        disc = b * b - (np.sum(q * q, axis=1) - domain.radius ** 2)
        t = (-b + np.sqrt(np.maximum(disc, 0.0))) / h
        return np.clip(t, 1e-6, 1.0)
    lo = np.zeros(len(p))
    hi = np.ones(len(p))
    for _ in range(52):
        mid = 0.5 * (lo + hi)
        inside = domain.boundary_distance(p + (mid * h)[:, None] * e) > 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return np.clip(hi, 1e-6, 1.0)


@functools.lru_cache(maxsize=4)
def _shortley_weller(grid):
    """Operator ``-Laplace`` on interior nodes with exact boundary crossings.

    Returns (matrix, list of boundary couplings).  Each coupling is
    ``(row, coefficient, crossing point)`` so that the Dirichlet value at the
    crossing enters the right side as ``coefficient * value``.
    """
    n = grid.n_interior
    pts = grid.coords[grid.mask]
    ijk = np.argwhere(grid.mask)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    brow, bcoef, bpts = [], [], []
    for ax in range(3):
        h = grid.h[ax]
        dist = {}
        nbr = {}
        for sgn in (-1, 1):
            j = ijk.copy()
            j[:, ax] += sgn
            valid = (j[:, ax] >= 0) & (j[:, ax] < grid.shape[ax])
            idx = np.full(n, -1)
            idx[valid] = grid.index[tuple(j[valid].T)]
            t = np.ones(n)
            out = idx < 0
            if out.any():
                e = np.zeros(3)
                e[ax] = sgn
                t[out] = _crossings(grid.domain, pts[out], e, h)
            dist[sgn] = t * h
            nbr[sgn] = idx
        hl, hr = dist[-1], dist[1]
        for sgn, hs in ((-1, hl), (1, hr)):
            c = 2.0 / (hs * (hl + hr))
            diag += c
            idx = nbr[sgn]
            inn = idx >= 0
            rows.append(np.nonzero(inn)[0])
            cols.append(idx[inn])
            vals.append(-c[inn])
            out = ~inn
            if out.any():
                e = np.zeros(3)
                e[ax] = sgn
                brow.append(np.nonzero(out)[0])
                bcoef.append(c[out])
                bpts.append(pts[out] + hs[out, None] * e)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    if brow:
        bdry = (np.concatenate(brow), np.concatenate(bcoef), np.concatenate(bpts))
    else:
        bdry = (np.zeros(0, int), np.zeros(0), np.zeros((0, 3)))
    return L, bdry


def grid_lowest_eigenvalue(grid, a_vals):
    """Lowest eigenvalue of the symmetric discrete ``-Laplace + a`` (relative
    to the lumped mass)."""
    K = grid.stiffness
    w = grid.interior_weights
    A = (K + sp.diags(w * a_vals[grid.mask])).tocsc()
    n = K.shape[0]
    if n <= 4000:
        ev = spla.eigsh(A, k=1, M=sp.diags(w).tocsc(), sigma=-1e-8 - abs(a_vals).max() - 1.0,
                        which="LM", return_eigenvectors=False)
        return float(ev[0])
    import pyamg
    ml = pyamg.smoothed_aggregation_solver(K.tocsr())
    X = np.random.default_rng(0).standard_normal((n, 2))
    ev, _ = spla.lobpcg(A, X, B=sp.diags(w), M=ml.aspreconditioner(), tol=1e-6,
                        maxiter=200, largest=False)
    return float(np.min(ev))


class _GridGreensOperator:
    """Factorized ``SW(-Laplace) + a`` reused across poles."""

    def __init__(self, grid, af):
        self.grid = grid
        self.a = af
        L, self.bdry = _shortley_weller(grid)
        self.A = (L + sp.diags(af.values[grid.mask])).tocsr()
        self._solve = _SparseSolver(self.A, symmetric=False, tol=1e-11)

    def solve(self, x, node=None):
        g = self.grid
        if node is None:
            node = g.nearest_interior_node(x)
        x = g.coords[node]
        pts = g.coords[g.mask]
        rho = np.linalg.norm(pts - x, axis=1)
        ay = self.a.values[g.mask]
        ax = float(self.a.values[node])
        with np.errstate(divide="ignore", invalid="ignore"):
            F = np.where(rho > 0, (ay - ax) / np.where(rho > 0, rho, 1.0), 0.0) + ay * ax * rho / 2.0
        rows, coef, bpts = self.bdry
        rb = np.linalg.norm(bpts - x, axis=1)
        kb = 1.0 / rb + ax * rb / 2.0
        rhs = F.copy()
        np.add.at(rhs, rows, coef * kb)
        Kv = self._solve(rhs)
        resid = float(np.linalg.norm(self.A @ Kv - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if not np.isfinite(resid) or resid > 1e-6:
            raise LinearSolveFailure(f"relative residual {resid:.2e}")
        rho_all = np.linalg.norm(g.coords - x, axis=-1)
        with np.errstate(divide="ignore"):
            H = np.where(rho_all > 0, 1.0 / np.where(rho_all > 0, rho_all, 1.0), 0.0)
        H[g.mask] = Kv - ax * rho / 2.0
        # K is smooth through the pole, so its nodal value there is H(x, x)
        # with second-order error; the neighbour extrapolation is kept as a
        # diagnostic only (it is first-order limited by the O(h^2) noise of H)
        phi = float(H[node])
        return GreensData(np.asarray(x, float), ScalarField(g, H, "H", pole=x), phi, "GridFD",
                          resid, self.a, {"node": tuple(int(i) for i in node),
                                          "phi_neighbour_richardson": _richardson_phi(g, H, node)})


def _richardson_phi(grid, H, node):
    """``2 * mean_h - mean_2h`` of H over the axis neighbours of the pole."""
    node = np.asarray(node)
    means = []
    for k in (1, 2):
        vals = []
        for ax in range(3):
            for sgn in (-1, 1):
                j = node.copy()
                j[ax] += sgn * k
                if 0 <= j[ax] < grid.shape[ax] and grid.mask[tuple(j)]:
                    vals.append(H[tuple(j)])
                else:
                    vals.append(np.nan)
        means.append(np.array(vals))
    m1, m2 = means
    ok = np.isfinite(m1) & np.isfinite(m2)
    if ok.sum() < 2:
        return float(H[tuple(node)])
    # pair opposite neighbours so that the linear term cancels
    pair_ok = ok.reshape(3, 2).all(axis=1)
    if not pair_ok.any():
        return float(H[tuple(node)])
    m1p = m1.reshape(3, 2)[pair_ok].mean()
    m2p = m2.reshape(3, 2)[pair_ok].mean()
    return float(2.0 * m1p - m2p)


def solve_greens_grid(a, x, grid=None, *, domain=None, n=97, check=True):
    """Regular part of the Green's function on a 3D grid.

    Solves for ``K = H + a(x)|y-x|/2`` which removes the kink of ``H`` at the
    pole; boundary values enter at the exact boundary crossings
    (Shortley-Weller).  The pole is snapped to the nearest interior node.
    """
    if grid is None:
        if domain is None:
            raise ValueError("need a grid or a domain")
        grid = Grid3D(domain, n)
    af = sample(grid, a, "a")
    if check:
        mu = grid_lowest_eigenvalue(grid, af.values)
        if mu <= 0:
            raise NonCoercive(f"lowest discrete eigenvalue {mu:.6g} <= 0")
    return _GridGreensOperator(grid, af).solve(np.asarray(x, float))


# --------------------------------------------------------------------------
# Robin map and criticality
# --------------------------------------------------------------------------

@dataclass
class RobinMap:
    points: np.ndarray
    phi: np.ndarray
    min_point: np.ndarray
    min_value: float
    zero_tol: float
    zero_set: np.ndarray
    failed: list = field(default_factory=list)
    method: str = "grid"

    @property
    def min_index(self):
        return int(np.nanargmin(self.phi))


def _phi_scale(domain):
    lo, hi = domain.bounds()
    return 2.0 / float(np.min(hi - lo))


def robin_map(domain, a, stride=2, *, n=33, zero_tol=None, threads=1, method="grid",
              radial_n=256):
    """Robin function over a lattice of sample poles.

    ``method="radial"`` (balls with radial ``a`` only) returns the single
    center sample computed by the spectral solver.  Failed samples are
    recorded in ``failed`` and skipped.
    """
    if method == "radial":
        if not isinstance(domain, UnitBall):
            raise DomainMismatch("radial Robin map needs a ball")
        gd = solve_greens_radial(a, domain.radius, n=radial_n)
        tol = RADIAL_ZERO_TOL * (1.0 / domain.radius) if zero_tol is None else zero_tol
        pts = np.asarray(domain.center, float)[None, :]
        ph = np.array([gd.phi])
        zs = pts[ph <= tol]
        return RobinMap(pts, ph, pts[0], float(ph[0]), tol, zs, [], "radial")
    grid = Grid3D(domain, n)
    af = sample(grid, a, "a")
    mu = grid_lowest_eigenvalue(grid, af.values)
    if mu <= 0:
        raise NonCoercive(f"lowest discrete eigenvalue {mu:.6g} <= 0")
    op = _GridGreensOperator(grid, af)
    stride = max(1, int(stride))
    nodes = [tuple(ijk) for ijk in np.argwhere(grid.mask)
             if all((ijk[k] - grid.shape[k] // 2) % stride == 0 for k in range(3))]
    # Richardson needs two neighbours per direction
    nodes = [nd for nd in nodes if _has_two_neighbours(grid, nd)] or nodes

    def one(nd):
        try:
            return nd, op.solve(grid.coords[nd], node=nd).phi, None
        except Exception as exc:  # per-sample failure is reported, not fatal
            return nd, np.nan, repr(exc)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(one, nodes))
    else:
        res = [one(nd) for nd in nodes]
    pts = np.array([grid.coords[nd] for nd, _, _ in res])
    ph = np.array([p for _, p, _ in res])
    failed = [(grid.coords[nd].tolist(), err) for nd, _, err in res if err]
    if np.all(np.isnan(ph)):
        raise LinearSolveFailure("every sample failed")
    tol = GRID_ZERO_TOL * _phi_scale(domain) if zero_tol is None else zero_tol
    k = int(np.nanargmin(ph))
    zs = pts[np.nan_to_num(ph, nan=np.inf) <= tol]
    return RobinMap(pts, ph, pts[k], float(ph[k]), tol, zs, failed, "grid")


def _has_two_neighbours(grid, nd):
    for ax in range(3):
        for sgn in (-1, 1):
            for k in (1, 2):
                j = list(nd)
                j[ax] += sgn * k
                if not (0 <= j[ax] < grid.shape[ax]) or not grid.mask[tuple(j)]:
                    return False
    return True


@dataclass
class CriticalityReport:
    min_phi: float
    max_a_on_zero_set: float
    verdict: str
    assumption_flag: bool
    zero_tol: float


def _eval_pointwise(a, pts):
    pts = np.atleast_2d(pts)
    if isinstance(a, ScalarField):
        g = a.grid
        if isinstance(g, RadialGrid):
            rr = np.linalg.norm(pts, axis=1)
            return np.interp(rr, g.r, a.values)
        idx = [g.nearest_interior_node(p) for p in pts]
        return np.array([a.values[i] for i in idx])
    if callable(a):
        return np.asarray(a(pts), float).reshape(len(pts))
    return np.full(len(pts), float(a))


def criticality_check(robin, a):
    """Classify ``a`` from its Robin map."""
    tol = robin.zero_tol
    m = robin.min_value
    if m < -tol:
        verdict = "Subcritical"
    elif m > tol:
        verdict = "Supercritical-like"
    else:
        verdict = "ConsistentCritical"
    if len(robin.zero_set):
        amax = float(np.max(_eval_pointwise(a, robin.zero_set)))
        flag = amax < 0
    else:
        amax = float("nan")
        flag = False
    return CriticalityReport(m, amax, verdict, flag, tol)


def calibrate_critical(a, domain=None, *, method="radial", tol=None, n=None, c_max=1e3,
                       max_iter=200):
    """Find ``c`` such that ``min phi_{c a} = 0`` by bisection.

    Returns ``(c, min phi at c)``.  ``a`` must be nonpositive somewhere for a
    root to exist.  Loss of coercivity counts as overshooting.
    """
    domain = domain or UnitBall(1.0)
    if method == "radial":
        n = n or 256
        grid = RadialGrid(domain.radius, n)
        base = sample(grid, a).values
        tol = RADIAL_ZERO_TOL if tol is None else tol

        def minphi(c):
            return solve_greens_radial(c * base, grid=grid).phi
    else:
        n = n or 33
        grid = Grid3D(domain, n)
        base = sample(grid, a).values
        tol = GRID_ZERO_TOL * _phi_scale(domain) if tol is None else tol

        def minphi(c):
            return robin_map(domain, ScalarField(grid, c * base), n=n).min_value

    def f(c):
        try:
            return minphi(c)
        except NonCoercive:
            return -np.inf

    lo, flo = 0.0, f(0.0)
    if flo <= 0:
        raise EmptyZeroSet("phi is already nonpositive without the potential")
    hi = 1.0
    while f(hi) > 0:
        lo = hi
        hi *= 2.0
        if hi > c_max:
            raise EmptyZeroSet("no sign change of min phi up to c_max")
    fm = np.inf
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol:
            return mid, fm
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), fm


# --------------------------------------------------------------------------
# Q_V
# --------------------------------------------------------------------------

def _box_integral(k, half):
    """``int_{[-A,A]x[-B,B]x[-C,C]} |y|^{-k} dy`` via the divergence theorem."""
    from scipy.integrate import dblquad
    tot = 0.0
    for ax in range(3):
        A = half[ax]
        B, C = [half[j] for j in range(3) if j != ax]
        val = dblquad(lambda z, y: A * (A * A + y * y + z * z) ** (-k / 2.0), -B, B, -C, C,
                      epsabs=1e-13, epsrel=1e-12)[0]
        tot += 2.0 * val
    return tot / (3.0 - k)


@functools.lru_cache(maxsize=16)
def lattice_correction(k, h, M=24):
    """Weight to add at the pole so that the nodal sum over a full lattice of
    ``f / |y|^k`` (pole excluded) integrates the singularity correctly."""
    h = np.asarray(h, float)
    half = M * h
    n = np.arange(-M, M + 1)
    wt = np.ones(2 * M + 1)
    wt[0] = wt[-1] = 0.5
    X, Y, Z = np.meshgrid(n * h[0], n * h[1], n * h[2], indexing="ij")
    W = wt[:, None, None] * wt[None, :, None] * wt[None, None, :]
    rho = np.sqrt(X * X + Y * Y + Z * Z)
    rho[M, M, M] = np.inf
    s = np.prod(h) * np.sum(W * rho ** (-k))
    return _box_integral(k, half) - s


def q_v(greens, V):
    """``int V G^2`` with the singular split ``G^2 = r^-2 - 2H/r + H^2``."""
    g = greens.grid
    Vf = sample(g, V, "V")
    _check_same_grid(Vf, greens.H)
    if isinstance(g, RadialGrid):
        # r^2 G^2 = (1 - r H)^2 is smooth, so the plain rule is exact in r
        prof = 1.0 - g.r * greens.H.values
        return 4.0 * np.pi * float(np.sum(g.w * Vf.values * prof ** 2))
    x = greens.pole
    node = greens.info.get("node") or g.nearest_interior_node(x)
    rho = np.linalg.norm(g.coords - x, axis=-1)
    W = g.weights
    H = greens.H.values
    Vv = Vf.values
    pole = rho == 0
    with np.errstate(divide="ignore"):
        inv = np.where(pole, 0.0, 1.0 / np.where(pole, 1.0, rho))
    smooth = np.sum(W * Vv * H * H)
    sing = np.sum(W * Vv * (inv * inv - 2.0 * H * inv))
    hk = tuple(float(v) for v in g.h)
    corr = lattice_correction(2, hk) * Vv[node] + lattice_correction(1, hk) * (-2.0 * H[node] * Vv[node])
    return float(smooth + sing + corr)
