"""Direct minimization of the Sobolev quotient with a potential, the
small-parameter sweep, and the blow-up decomposition of (almost) minimizers.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .asymptotics import (POSITIVE_REGIME, fit_coefficients, predict_limit,
                          predict_scale, sobolev_constant)
from .bubbles import (BubbleParams, project_T, psi_trial, pu_bubble, rayleigh,
                      zero_mode_basis)
from .errors import (DivisionUnstable, FitDegenerate, InsufficientSweep,
                     NonCoercive, ZeroField)
from .fields import (Grid3D, RadialGrid, ScalarField, dof_space, h1_inner,
                     integrate, sample)
from .greens import (grid_lowest_eigenvalue, q_v, radial_lowest_eigenvalue,
                     solve_greens_grid, solve_greens_radial)

log = logging.getLogger(__name__)

EPS_FLOOR = 0.005
L6_TARGET = math.pi ** 2 / 4.0  # (S/3)^(3/2)


@dataclass
class MinimizeResult:
    eps: float
    S_est: float
    u: ScalarField
    iterations: int
    gradient_norm: float
    initializer: str
    status: str
    initial_quotient: float
    history: list = field(default_factory=list, repr=False)
    radial_assumption: bool = False

    @property
    def converged(self):
        return self.status == "converged"


def _quotient_parts(x, ds, pot):
    Kx = ds.K @ x
    num = float(x @ Kx) + float(np.sum(ds.mass * pot * x * x))
    d6 = ds.sixth(x)
    return num, d6, Kx


def _value_grad(x, ds, pot):
    num, d6, Kx = _quotient_parts(x, ds, pot)
    if not d6 > 0:
        raise ZeroField("iterate vanished")
    q = num / d6 ** (1.0 / 3.0)
    g = (2.0 * (Kx + ds.mass * pot * x) - num / (3.0 * d6) * ds.sixth_grad(x)) / d6 ** (1.0 / 3.0)
    return q, g


def _normalize(x, ds):
    return x * (L6_TARGET / ds.sixth(x)) ** (1.0 / 6.0)


def _check_coercive(grid, pot_field):
    if isinstance(grid, RadialGrid):
        mu = radial_lowest_eigenvalue(grid, pot_field.values)
    else:
        mu = grid_lowest_eigenvalue(grid, pot_field.values)
    if mu <= 0:
        raise NonCoercive(f"lowest Dirichlet eigenvalue {mu:.6g} <= 0")


def _initial_field(grid, init, a, x0=(0.0, 0.0, 0.0)):
    if isinstance(init, ScalarField):
        return init, init.name or "field"
    if isinstance(init, BubbleParams):
        p = init
        kind = "psi"
    elif isinstance(init, tuple) and len(init) == 2 and isinstance(init[0], str):
        kind, p = init
    else:
        raise TypeError("init must be a ScalarField, BubbleParams or (kind, BubbleParams)")
    if kind == "pu":
        return pu_bubble(p, grid), f"PU(lam={p.lam:.6g})"
    if isinstance(grid, RadialGrid):
        ga = solve_greens_radial(a, grid=grid, check=False)
        g0 = solve_greens_radial(0.0, grid=grid, check=False)
    else:
        ga = solve_greens_grid(a, p.x, grid, check=False)
        g0 = solve_greens_grid(0.0, p.x, grid, check=False)
        p = BubbleParams(tuple(ga.pole), p.lam)
    return psi_trial(p, grid, ga, g0), f"psi(lam={p.lam:.6g})"


def minimize_rayleigh(grid, a, V, eps, init, *, gtol=1e-10, max_iter=5000, patience=3,
                      check=True):
    """Minimize the quotient with potential ``a + eps V`` over the discrete
    H^1_0 space of ``grid``.

    Descent uses the H^1_0 (Sobolev) gradient with Barzilai-Borwein steps
    measured in the stiffness metric, monotone backtracking, and
    renormalization to ``int u^6 = pi^2/4`` after every step.  Stops when the
    relative decrease stays below ``gtol`` for ``patience`` consecutive
    steps; otherwise returns the best iterate with status ``"max_iter"`` or
    ``"stagnated"``.
    """
    pot_f = sample(grid, a) + eps * sample(grid, V).values
    if check:
        _check_coercive(grid, pot_f)
    u0, desc = _initial_field(grid, init, a)
    ds = dof_space(grid)
    pot = ds.restrict(pot_f)
    x = ds.to_dofs(u0)
    if not np.any(x):
        raise ZeroField("initializer vanishes")
    x = _normalize(x, ds)
    q, g = _value_grad(x, ds, pot)
    q0 = q
    sg = ds.solve(g)
    step = 0.1 / max(1.0, math.sqrt(abs(float(g @ sg))))
    history = [q]
    small = 0
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        accepted = False
        while step > 1e-18:
            xn = _normalize(x - step * sg, ds)
            qn, gn = _value_grad(xn, ds, pot)
            if qn <= q:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = "stagnated"
            break
        sgn = ds.solve(gn)
        s = xn - x
        y = gn - g
        sKs = float(s @ (ds.K @ s))
        sy = float(s @ y)
        step = sKs / sy if sy > 0 else 2.0 * step
        rel = (q - qn) / abs(q)
        assert qn <= history[-1]
        x, q, g, sg = xn, qn, gn, sgn
        history.append(q)
        small = small + 1 if rel < gtol else 0
        if small >= patience:
            status = "converged"
            break
    gnorm = math.sqrt(max(float(g @ sg), 0.0))
    u = ds.from_dofs(x, "minimizer")
    return MinimizeResult(float(eps), q, u, it, gnorm, desc, status, q0, history,
                          isinstance(grid, RadialGrid))


# --------------------------------------------------------------------------
# epsilon sweep
# --------------------------------------------------------------------------

@dataclass
class SweepResult:
    eps: np.ndarray
    S_est: np.ndarray
    ratios: np.ndarray
    results: list
    extrapolated: float
    uncertainty: float
    prediction: object
    predicted_ratio: float | None
    monotone_trend: bool
    scale_guess: np.ndarray = None

    def rows(self):
        for k, e in enumerate(self.eps):
            r = self.results[k]
            yield {"eps": e, "S_est": self.S_est[k], "ratio": self.ratios[k],
                   "iterations": r.iterations, "status": r.status}


def epsilon_sweep(grid, a, V, eps_list, *, x0=(0.0, 0.0, 0.0), threads=1, eps_floor=EPS_FLOOR,
                  init_lam=20.0, **opts):
    """Minimize for each ``eps`` and extrapolate ``(S - S_est)/eps^2``.

    Each run starts from the trial function at the scale predicted from
    ``|Q_V|`` at ``x0`` (or at ``init_lam`` when
    no scale is predicted).  The limit comes from a fit ``L + c eps`` over all
    sweep points; the uncertainty is its distance to the two-point
    Richardson value of the smallest pair.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 3:
        raise InsufficientSweep("need at least 3 values of eps")
    if min(eps_list) < eps_floor:
        raise ValueError(f"eps below the resolvable floor {eps_floor}")
    S = sobolev_constant()
    if isinstance(grid, RadialGrid):
        ga = solve_greens_radial(a, grid=grid)
        ax = float(sample(grid, a).values[0])
    else:
        ga = solve_greens_grid(a, x0, grid)
        ax = float(ga.a.values[ga.info["node"]])
        x0 = tuple(ga.pole)
    qx = q_v(ga, V)
    pred = predict_limit([(x0, ax, qx)]) if ax != 0 else None
    pred_ratio = pred.ratio if pred is not None else None
    scaled = qx != 0 and ax != 0
    scale = predict_scale(ax, qx) if scaled else init_lam

    def run(e):
        # without a predicted scale every eps starts from the same bubble
        p = BubbleParams(x0, scale / e if scaled else scale)
        return minimize_rayleigh(grid, a, V, e, p, **opts)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, eps_list))
    else:
        results = [run(e) for e in eps_list]
    eps = np.asarray(eps_list)
    Sest = np.array([r.S_est for r in results])
    ratios = (S - Sest) / eps ** 2
    fit = fit_coefficients(eps, ratios, (0.0, 1.0))
    L = float(fit.coefficients[0])
    rich = 2.0 * ratios[-1] - ratios[-2] if abs(eps[-2] - 2 * eps[-1]) < 1e-12 else \
        (eps[-2] * ratios[-1] - eps[-1] * ratios[-2]) / (eps[-2] - eps[-1])
    unc = abs(L - rich)
    target = pred_ratio if pred_ratio is not None else 0.0
    dist = np.abs(ratios - target)
    mono = bool(np.all(np.diff(dist) <= 0))
    return SweepResult(eps, Sest, ratios, results, L, unc, pred, pred_ratio, mono,
                       scale / eps if scaled else np.full(eps.shape, scale))


# --------------------------------------------------------------------------
# blow-up decomposition
# --------------------------------------------------------------------------

@dataclass
class BlowupReport:
    alpha: float
    x: np.ndarray
    lam: float
    correlation: float
    w_norm: float
    r_norm: float
    t_residual_norm: float
    beta: float
    gamma: float
    delta: np.ndarray
    reconstruction_error: float
    w: ScalarField = field(repr=False, default=None)
    r: ScalarField = field(repr=False, default=None)
    phi_at_x: float | None = None
    eps: float | None = None

    @property
    def observables(self):
        out = {"eps_lam": math.nan, "phi_over_eps": math.nan, "r_over_eps": math.nan}
        if self.eps:
            out["eps_lam"] = self.eps * self.lam
            out["r_over_eps"] = self.r_norm / self.eps
            if self.phi_at_x is not None:
                out["phi_over_eps"] = self.phi_at_x / self.eps
        return out


def _correlation(u, un, x, lam, grid):
    PU = pu_bubble(BubbleParams(x, lam), grid)
    n = math.sqrt(h1_inner(PU, PU))
    return h1_inner(u, PU) / (un * n), PU


def fit_decomposition(u, a, *, eps=None, x0=None, greens_a=None, greens_0=None,
                      min_correlation=0.5):
    """Fit ``u ~ alpha (PU_{x,lam} + w)`` with ``w`` orthogonal to the zero
    modes, and report the refined remainder and projection coefficients.

    On radial grids the center is fixed at the origin and only the scale is
    fitted.
    """
    grid = u.grid
    un = math.sqrt(h1_inner(u, u))
    if un == 0:
        raise ZeroField("cannot decompose the zero field")
    radial = isinstance(grid, RadialGrid)
    if radial:
        k = int(np.argmax(np.abs(u.values)))
        xpk = np.zeros(3)
    else:
        k = np.unravel_index(int(np.argmax(np.abs(u.values))), u.values.shape)
        xpk = grid.coords[k] if x0 is None else np.asarray(x0, float)
    lam0 = max(float(u.values[k]) ** 2, 1e-3)
    cands = []
    for start in (lam0, 0.5 * lam0, 2.0 * lam0):
        if radial:
            f = lambda z: -_correlation(u, un, (0.0, 0.0, 0.0), math.exp(z[0]), grid)[0]
            res = sp_minimize(f, [math.log(start)], method="Nelder-Mead",
                              options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400})
            xs, lam = np.zeros(3), math.exp(res.x[0])
        else:
            f = lambda z: -_correlation(u, un, tuple(z[:3]), math.exp(z[3]), grid)[0]
            res = sp_minimize(f, list(xpk) + [math.log(start)], method="Nelder-Mead",
                              options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 800})
            xs, lam = np.asarray(res.x[:3]), math.exp(res.x[3])
        cands.append(_decompose(u, un, xs, lam, a, greens_a, greens_0, eps))
    best = min(cands, key=lambda rep: rep.w_norm)
    if best.correlation < min_correlation:
        raise FitDegenerate(f"correlation {best.correlation:.3f} below {min_correlation}")
    return best


def _decompose(u, un, x, lam, a, greens_a, greens_0, eps):
    grid = u.grid
    p = BubbleParams(tuple(x), lam)
    basis = zero_mode_basis(p, grid)
    PU = basis.PU
    corr = h1_inner(u, PU) / (un * basis.norms[0])
    alpha = h1_inner(u, PU) / basis.norms[0] ** 2
    v = u / alpha - PU
    _, tv = project_T(v, basis)
    w = v - tv
    # regular-part correction at the fitted point
    if isinstance(grid, RadialGrid):
        ga = greens_a or solve_greens_radial(a, grid=grid, check=False)
        g0 = greens_0 or solve_greens_radial(0.0, grid=grid, check=False)
    else:
        ga = greens_a or solve_greens_grid(a, x, grid, check=False)
        g0 = greens_0 or solve_greens_grid(0.0, x, grid, check=False)
    dH = (ga.H - g0.H).zero_boundary()
    q = lam ** -0.5 * dH
    coef_q, _ = project_T(q, basis)
    rr = v + q
    _, tr = project_T(rr, basis)
    r = rr - tr
    beta = coef_q[0] * lam / basis.norms[0]
    gamma = coef_q[1] / basis.norms[1]
    delta = coef_q[2:] * lam ** 3 / basis.norms[2:]
    recon = u / alpha - PU - w - tv
    rec_err = math.sqrt(abs(h1_inner(recon, recon)))
    return BlowupReport(float(alpha), np.asarray(x, float), float(lam), float(corr),
                        math.sqrt(max(h1_inner(w, w), 0.0)), math.sqrt(max(h1_inner(r, r), 0.0)),
                        math.sqrt(max(h1_inner(tv, tv), 0.0)), float(beta), float(gamma),
                        np.asarray(delta, float), rec_err, w, r, float(ga.phi), eps)


def almost_minimizer_gap(u, result, a, V, eps=None, *, floor=1e-12):
    """``(quotient(u) - S_est) / (S - S_est)`` with ``S_est`` from ``result``."""
    eps = result.eps if eps is None else eps
    S = sobolev_constant()
    denom = S - result.S_est
    if denom < floor:
        raise DivisionUnstable(f"S - S_est = {denom:.3g} below {floor}")
    num = rayleigh(u, a, V, eps) - result.S_est
    if abs(num) < floor:
        num = 0.0
    return num / denom
