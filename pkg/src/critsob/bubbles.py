"""Bubbles, their Dirichlet projections, the trial function and the zero-mode
space, with projections, energies and the coercivity eigenvalue check.

The bubble centred at ``x`` with scale ``lam`` is
``U(y) = lam^(1/2) (1 + lam^2 |y - x|^2)^(-1/2)``; it solves
``-Laplace U = 3 U^5`` in R^3.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (DomainMismatch, EigenSolveFailure, IllConditionedGram,
                     PoleMismatch, ZeroField)
from .fields import (RadialGrid, ScalarField, dof_space, h1_inner, integrate, sextic_integral,
                     l2_inner, sample, solve_poisson)

T_MIN = 10.0
GRAM_FLOOR = 1e-12
GRAM_COND_MAX = 1e8


class RegimeWarning(UserWarning):
    """Emitted when ``lam * d`` is below the asymptotic threshold."""


@dataclass(frozen=True)
class BubbleParams:
    """Concentration point ``x`` and scale ``lam``; ``d`` is filled from the
    domain when one is given."""

    x: tuple
    lam: float
    domain: object = None
    T_min: float = T_MIN
    d: float = field(default=np.nan, init=False)

    def __post_init__(self):
        x = tuple(float(v) for v in np.broadcast_to(np.asarray(self.x, float), (3,)))
        object.__setattr__(self, "x", x)
        if not self.lam > 0:
            raise ValueError("scale must be positive")
        if self.domain is not None:
            d = float(self.domain.boundary_distance(np.asarray(x)))
            object.__setattr__(self, "d", d)
            if self.lam * d <= self.T_min:
                warnings.warn(f"lam*d = {self.lam * d:.3g} <= {self.T_min}", RegimeWarning,
                              stacklevel=2)


def _distance(params, grid):
    if isinstance(grid, RadialGrid):
        if np.any(np.asarray(params.x) != 0.0):
            raise DomainMismatch("radial grids only carry bubbles centred at the origin")
        return grid.r
    return np.linalg.norm(grid.coords - np.asarray(params.x), axis=-1)


def u_bubble(params, grid):
    rho = _distance(params, grid)
    lam = params.lam
    return ScalarField(grid, np.sqrt(lam) / np.sqrt(1.0 + (lam * rho) ** 2), "U",
                       pole=np.asarray(params.x))


def du_dlam(params, grid):
    """Closed-form ``d U / d lam``."""
    rho = _distance(params, grid)
    lam = params.lam
    t2 = (lam * rho) ** 2
    return ScalarField(grid, 0.5 / np.sqrt(lam) * (1.0 - t2) / (1.0 + t2) ** 1.5, "dU_dlam")


def du_dx(params, grid, i):
    """Closed-form ``d U / d x_i``; a dipole sector on radial grids."""
    lam = params.lam
    if isinstance(grid, RadialGrid):
        rho = _distance(params, grid)
        vals = lam ** 2.5 * rho / (1.0 + (lam * rho) ** 2) ** 1.5
        return ScalarField(grid, vals, f"dU_dx{i}", l=1, axis=i)
    rho = _distance(params, grid)
    diff = grid.coords[..., i] - params.x[i]
    return ScalarField(grid, lam ** 2.5 * diff / (1.0 + (lam * rho) ** 2) ** 1.5, f"dU_dx{i}")


def pu_bubble(params, grid):
    """Dirichlet projection: ``-Laplace PU = 3 U^5``, ``PU = 0`` on the boundary."""
    U = u_bubble(params, grid)
    return solve_poisson(3.0 * U ** 5, "PU")


@dataclass
class BubbleBasis:
    """The zero-mode fields ``PU, d_lam PU, d_1 PU, d_2 PU, d_3 PU``."""

    params: BubbleParams
    U: ScalarField
    fields: list
    norms: np.ndarray
    gram: np.ndarray
    f: ScalarField | None = None

    @property
    def PU(self):
        return self.fields[0]

    @property
    def normalized(self):
        return [fl / nm for fl, nm in zip(self.fields, self.norms)]

    def gram_inv_sqrt(self):
        ev, Q = np.linalg.eigh(self.gram)
        if ev.min() <= 0 or ev.max() / max(ev.min(), GRAM_FLOOR) > GRAM_COND_MAX:
            raise IllConditionedGram(f"Gram eigenvalues {ev.min():.3g}..{ev.max():.3g}")
        ev = np.maximum(ev, GRAM_FLOOR)
        return (Q / np.sqrt(ev)) @ Q.T

    def orthonormal(self):
        """H^1_0-orthonormal basis of the span (symmetric orthogonalization)."""
        W = self.gram_inv_sqrt()
        nf = self.normalized
        out = []
        for j in range(5):
            acc = None
            for k in range(5):
                if W[j, k] == 0.0 or _sector(nf[k]) != _sector(nf[j]):
                    continue
                term = W[j, k] * nf[k]
                acc = term if acc is None else acc + term
            out.append(acc)
        return out


def _sector(u):
    return (u.l, u.axis if u.l else None)


def zero_mode_basis(params, grid, greens0=None):
    """Five zero-mode fields with their normalized Gram matrix.

    If ``greens0`` (regular part for ``a = 0`` at the same pole) is given, or
    the grid is radial, the residual ``f = U - lam^(-1/2) H_0 - PU`` is
    attached as a diagnostic.
    """
    U = u_bubble(params, grid)
    U4 = U ** 4
    PU = solve_poisson(3.0 * U4 * U, "PU")
    dl = solve_poisson(15.0 * U4 * du_dlam(params, grid), "dlam_PU")
    dxs = [solve_poisson(15.0 * U4 * du_dx(params, grid, i), f"dx{i}_PU") for i in range(3)]
    fl = [PU, dl] + dxs
    norms = np.array([np.sqrt(h1_inner(u, u)) for u in fl])
    G = np.eye(5)
    for j in range(5):
        for k in range(j + 1, 5):
            G[j, k] = G[k, j] = h1_inner(fl[j], fl[k]) / (norms[j] * norms[k])
    f = None
    if greens0 is None and isinstance(grid, RadialGrid):
        from .greens import solve_greens_radial
        greens0 = solve_greens_radial(0.0, grid=grid, check=False)
    if greens0 is not None:
        f = (U - params.lam ** -0.5 * greens0.H - PU).zero_boundary()
    return BubbleBasis(params, U, fl, norms, G, f)


def project_T(u, basis):
    """Projection onto the zero-mode span.

    Returns ``(coefficients, tangential part)``; the coefficients refer to
    the normalized fields ``phi_j / ||grad phi_j||``, so ``u = PU`` yields
    ``(||grad PU||, 0, 0, 0, 0)``.
    """
    nf = basis.normalized
    basis.gram_inv_sqrt()  # conditioning check
    ell = np.array([h1_inner(u, v) for v in nf])
    match = np.array([_sector(v) == _sector(u) for v in nf])
    coef = np.zeros(5)
    if match.any():
        Gm = basis.gram[np.ix_(match, match)]
        coef[match] = np.linalg.solve(Gm, ell[match])
    tang = u * 0.0
    for c, v in zip(coef, nf):
        if c != 0.0:
            tang = tang + c * v
    return coef, tang.with_values(tang.values, "T-part")


def project_T_perp(u, basis):
    """``u - Pi u`` (H^1_0-orthogonal to every zero mode)."""
    _, tang = project_T(u, basis)
    return (u - tang).with_values((u - tang).values, "Tperp-part")


def psi_trial(params, grid, greens_a, greens_0):
    """Trial function ``PU - lam^(-1/2) (H_a - H_0)``."""
    if not np.allclose(greens_a.pole, greens_0.pole, atol=0.0, rtol=0.0):
        raise PoleMismatch(f"{greens_a.pole} vs {greens_0.pole}")
    if not isinstance(grid, RadialGrid):
        tol = 0.51 * float(np.max(grid.h)) * np.sqrt(3)
        if np.linalg.norm(greens_a.pole - np.asarray(params.x)) > tol:
            raise PoleMismatch("Green's data pole is not the bubble center")
    elif np.any(greens_a.pole != 0.0) or np.any(np.asarray(params.x) != 0.0):
        raise PoleMismatch("radial Green's data must be centred")
    PU = pu_bubble(params, grid)
    psi = PU - params.lam ** -0.5 * (greens_a.H - greens_0.H)
    return psi.zero_boundary().with_values(psi.zero_boundary().values, "psi")


def energy(u, a=0.0, V=0.0, eps=0.0):
    """``int |grad u|^2 + (a + eps V) u^2``."""
    pot = sample(u.grid, a).values + eps * sample(u.grid, V).values
    return h1_inner(u, u) + l2_inner(u, u, pot)


def rayleigh(u, a=0.0, V=0.0, eps=0.0):
    """Energy over ``(int u^6)^(1/3)``."""
    if u.l:
        raise DomainMismatch("the quotient needs a radial (l = 0) field")
    m = float(np.max(np.abs(u.values)))
    if not m > 0:
        raise ZeroField("field vanishes")
    u = u / m  # scale-free evaluation keeps homogeneity at round-off
    d6 = sextic_integral(u)
    if not d6 > 0:
        raise ZeroField("field vanishes")
    return energy(u, a, V, eps) / d6 ** (1.0 / 3.0)


@dataclass
class CoercivityReport:
    lam: float
    x: tuple
    rho_min: float
    witness: ScalarField
    deflated: bool
    sector: int | None = None
    per_sector: dict = field(default_factory=dict)

    def witness_quotient(self, a=0.0):
        """``Q[witness] / ||grad witness||^2`` from the field-level forms."""
        w = self.witness
        U = u_bubble(BubbleParams(self.x, self.lam), w.grid)
        pot = sample(w.grid, a).values - 15.0 * U.values ** 4
        return (h1_inner(w, w) + l2_inner(w, w, pot)) / h1_inner(w, w)


def coercivity_min_eig(params, a, grid, *, deflate=True, lmax=3, tol=1e-8, seed=12345):
    """Smallest generalized eigenvalue of
    ``int |grad v|^2 + a v^2 - 15 U^4 v^2`` against ``int |grad v|^2`` on the
    H^1_0-orthogonal complement of the zero modes (or on everything when
    ``deflate=False``).

    On radial grids the problem splits into angular sectors ``l = 0..lmax``;
    the zero modes live in ``l = 0`` (PU, d_lam PU) and ``l = 1`` (d_i PU).
    Higher sectors only raise the quotient.
    """
    U = u_bubble(params, grid)
    pot = sample(grid, a).values - 15.0 * U.values ** 4
    if isinstance(grid, RadialGrid):
        basis = zero_mode_basis(params, grid) if deflate else None
        best = None
        per = {}
        for l in range(lmax + 1):
            ds = dof_space(grid, l)
            K = ds.K
            A = K + np.diag(ds.mass * pot[grid.interior])
            cons = []
            if deflate:
                if l == 0:
                    cons = [ds.to_dofs(basis.fields[0]), ds.to_dofs(basis.fields[1])]
                elif l == 1:
                    cons = [ds.to_dofs(basis.fields[4])]  # axis 2 representative
            if cons:
                C = K @ np.column_stack(cons)
                Z = sla.null_space(C.T)
                Ar, Br = Z.T @ A @ Z, Z.T @ K @ Z
            else:
                Z = None
                Ar, Br = A, K
            try:
                ev, vec = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Br + Br.T), subset_by_index=[0, 0])
            except (sla.LinAlgError, ValueError) as exc:
                raise EigenSolveFailure(str(exc)) from exc
            x = vec[:, 0] if Z is None else Z @ vec[:, 0]
            per[l] = float(ev[0])
            if best is None or ev[0] < best[0]:
                best = (float(ev[0]), l, x, ds)
        rho, l, x, ds = best
        wit = ds.from_dofs(x / np.sqrt(x @ (ds.K @ x)), "witness")
        return CoercivityReport(params.lam, params.x, rho, wit, deflate, l, per)
    return _coercivity_grid(params, grid, pot, deflate, tol, seed)


def _coercivity_grid(params, grid, pot, deflate, tol, seed=12345):
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    ds = dof_space(grid)
    K = ds.K
    A = (K + sp.diags(ds.mass * pot[grid.mask])).tocsr()
    Y = None
    if deflate:
        basis = zero_mode_basis(params, grid)
        Y = np.column_stack([ds.to_dofs(f) for f in basis.fields])
    try:
        import pyamg
        M = pyamg.smoothed_aggregation_solver(K.tocsr()).aspreconditioner()
    except Exception:  # pragma: no cover - pyamg is a hard dependency
        M = None
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((K.shape[0], 4))
    ev, vec = spla.lobpcg(A, X, B=K, M=M, Y=Y, tol=tol, maxiter=500, largest=False)
    k = int(np.argmin(ev))
    x = vec[:, k]
    x = x / np.sqrt(x @ (K @ x))
    rho = float((x @ (A @ x)))
    if not np.isfinite(rho):
        raise EigenSolveFailure("lobpcg did not converge")
    return CoercivityReport(params.lam, params.x, rho, ds.from_dofs(x, "witness"), deflate, None,
                            {"grid": rho})
