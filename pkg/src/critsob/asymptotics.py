"""Closed-form predictors for the bubble energy expansions and sweep-based
validators that fit numerical coefficients against them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bubbles import (BubbleParams, du_dlam, psi_trial, rayleigh, u_bubble,
                      zero_mode_basis)
from .errors import EmptyZeroSet, InsufficientSweep, SingularDesign
from .fields import (RadialGrid, ScalarField, UnitBall, h1_inner, integrate,
                     lp_norm, sample)
from .greens import solve_greens_grid, solve_greens_radial

PI = math.pi


def sobolev_constant():
    """Sharp Sobolev constant in three dimensions, ``3 (pi/2)^(4/3)``."""
    return 3.0 * (PI / 2.0) ** (4.0 / 3.0)


def constants_table():
    S = sobolev_constant()
    return {
        "S": S,
        "bubble_l6_mass": (S / 3.0) ** 1.5,          # = pi^2/4
        "bubble_dirichlet": 3.0 ** -0.5 * S ** 1.5,  # = 3 pi^2/4
        "quotient_prefactor": (S / 3.0) ** -0.5,     # = (pi/2)^(-2/3)
    }


# --------------------------------------------------------------------------
# trial-function predictors
# --------------------------------------------------------------------------

def predict_numerator(lam, phi, a, q=0.0, eps=0.0):
    """Truncated expansion of ``int |grad psi|^2 + (a + eps V) psi^2``."""
    t = 1.0 / np.asarray(lam, float)
    return 3.0 * PI ** 2 / 4.0 - 4 * PI * phi * t + 2 * PI * (4 - PI) * a * t ** 2 + eps * q * t


def predict_denominator(lam, phi, a):
    """Truncated expansion of ``int psi^6``."""
    t = 1.0 / np.asarray(lam, float)
    return PI ** 2 / 4.0 - 8 * PI * phi * t + 8 * PI * a * t ** 2 + 15 * PI ** 2 * phi ** 2 * t ** 2


def predict_quotient(lam, phi, a, q=0.0, eps=0.0):
    """Truncated expansion of the quotient of the trial function."""
    S = sobolev_constant()
    c = (S / 3.0) ** -0.5
    t = 1.0 / np.asarray(lam, float)
    return S + c * (4 * PI * phi * t + eps * q * t - 2 * PI ** 2 * a * t ** 2
                    - (15 * PI ** 2 - 128) * phi ** 2 * t ** 2)


def quotient_coefficients(phi, a, q=0.0, eps=0.0):
    """``(c1, c2)`` in ``S + c1/lam + c2/lam^2``."""
    c = (sobolev_constant() / 3.0) ** -0.5
    return c * (4 * PI * phi + eps * q), c * (-2 * PI ** 2 * a - (15 * PI ** 2 - 128) * phi ** 2)


# --------------------------------------------------------------------------
# limit and scale predictions
# --------------------------------------------------------------------------

POSITIVE_REGIME = "S(a+eps*V) = S for small eps"
INDETERMINATE = "Indeterminate"


@dataclass
class LimitPrediction:
    coefficient: float | None
    x0: np.ndarray | None
    regime: str
    ratio: float | None = None  # (S - S(a + eps V)) / eps^2, i.e. -coefficient


def predict_limit(samples, q_tol=1e-9):
    """Coefficient of ``eps^2`` in ``S(a + eps V) - S``.

    ``samples`` is an iterable of ``(x, a(x), Q_V(x))`` over zero-set
    points.  Points with ``|Q_V| <= q_tol`` are indeterminate.
    """
    samples = list(samples)
    if not samples:
        raise EmptyZeroSet("no zero-set samples")
    S = sobolev_constant()
    best = None
    indet = False
    for x, ax, qx in samples:
        if abs(qx) <= q_tol:
            indet = True
            continue
        if qx < 0:
            val = qx * qx / abs(ax) if ax != 0 else math.inf
            if best is None or val > best[0]:
                best = (val, np.asarray(x, float))
    if best is None:
        return LimitPrediction(None, None, INDETERMINATE if indet else POSITIVE_REGIME)
    coef = -((3.0 / S) ** 0.5) / (8 * PI ** 2) * best[0]
    return LimitPrediction(coef, best[1], "negative", -coef)


def predict_scale(a_x0, q_x0):
    """Limit of ``eps * lam_eps`` at the concentration point."""
    return 4 * PI ** 2 * abs(a_x0) / abs(q_x0)


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------

@dataclass
class FitResult:
    coefficients: np.ndarray
    residual: float
    powers: tuple


def fit_coefficients(xs, ys, powers, *, allow_exact=False):
    """Least squares ``ys ~ sum_k c_k xs^powers[k]``.

    ``residual`` is the largest misfit relative to ``max |ys|``.  Needs one
    more point than unknowns unless ``allow_exact`` (then the system may be
    square and is solved exactly).
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    powers = tuple(float(p) for p in powers)
    need = len(powers) + (0 if allow_exact else 1)
    if len(xs) < need:
        raise SingularDesign(f"need at least {need} points for {len(powers)} coefficients")
    if np.any(xs <= 0):
        raise SingularDesign("abscissae must be positive")
    if len(np.unique(xs)) != len(xs):
        raise SingularDesign("duplicated abscissae")
    A = np.column_stack([xs ** p for p in powers])
    scale = np.linalg.norm(A, axis=0)
    As = A / scale
    if np.linalg.matrix_rank(As) < len(powers):
        raise SingularDesign("rank-deficient design")
    c, *_ = np.linalg.lstsq(As, ys, rcond=None)
    c = c / scale
    fit = A @ c
    res = float(np.max(np.abs(fit - ys)) / max(np.max(np.abs(ys)), 1e-300))
    return FitResult(c, res, powers)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class ExpansionReport:
    name: str
    sweep: np.ndarray
    numeric: np.ndarray
    predicted: np.ndarray
    powers: tuple
    coefficients: np.ndarray
    target_power: float
    predicted_coefficient: float
    relative_residuals: np.ndarray
    tol: float
    passed: bool
    extra: dict = field(default_factory=dict)

    @property
    def fitted_coefficient(self):
        return float(self.coefficients[list(self.powers).index(self.target_power)])

    @property
    def ratio(self):
        if self.predicted_coefficient == 0:
            return math.nan
        return self.fitted_coefficient / self.predicted_coefficient

    def rows(self):
        for k, lam in enumerate(self.sweep):
            yield {"name": self.name, "sweep": lam, "numeric": self.numeric[k],
                   "predicted": self.predicted[k], "residual": self.relative_residuals[k]}


def _coef_pass(fitted, predicted, tol, abs_floor):
    if abs(predicted) <= 1e-12:  # e.g. phi_b squared at a critical point
        return abs(fitted) <= abs_floor
    return abs(fitted / predicted - 1.0) <= tol


# --------------------------------------------------------------------------
# lemma validators (ball, bubble at the center)
# --------------------------------------------------------------------------

LEMMAS = ("lem-V", "lem-uh", "lem-uh2", "lem-int-a", "nablapu", "pu6", "num1", "num2", "num5")
DEFAULT_SWEEP = (25.0, 50.0, 100.0, 200.0)
GRID_SWEEP = (15.0, 25.0, 40.0)


def _lemma_spec(name, b_center, phi_b, phi0, R):
    """(powers, target power, predicted coefficient, predicted-value fn, tol)."""
    if name == "lem-uh":
        return ((-0.5, -1.5, -2.5), -0.5, 4 * PI / 3 * phi_b,
                lambda l: 4 * PI / 3 * phi_b * l ** -0.5 - 4 * PI / 3 * b_center * l ** -1.5, 0.05)
    if name == "lem-uh2":
        return ((-1.0, -2.0, -3.0), -1.0, PI ** 2 * phi_b ** 2,
                lambda l: PI ** 2 * phi_b ** 2 / l, 0.10)
    if name == "lem-int-a":
        return ((-2.0, -3.0), -2.0, 2 * PI * (PI - 2) * b_center,
                lambda l: 2 * PI * (PI - 2) * b_center / l ** 2, 0.10)
    if name == "nablapu":
        return ((0.0, -1.0, -2.0), -1.0, -4 * PI * phi0,
                lambda l: 3 * PI ** 2 / 4 - 4 * PI * phi0 / l, 0.05)
    if name == "pu6":
        return ((0.0, -1.0, -2.0), -1.0, -8 * PI * phi0,
                lambda l: PI ** 2 / 4 - 8 * PI * phi0 / l, 0.05)
    if name == "num1":
        return ((-2.0, -3.0), -2.0, 3 * PI ** 2 / 4, lambda l: 3 * PI ** 2 / 4 / l ** 2, 0.10)
    if name == "num2":
        return ((-2.0, -3.0), -2.0, 15 * PI ** 2 / 64, lambda l: 15 * PI ** 2 / 64 / l ** 2, 0.10)
    if name == "num5":
        return ((-1.5, -3.5), -1.5, -2 * PI / 15, lambda l: -2 * PI / 15 * l ** -1.5, 0.10)
    raise ValueError(f"unknown lemma {name!r}; expected one of {LEMMAS}")


def _lemma_value(name, lam, grid, b, gb, g0):
    p = BubbleParams((0.0, 0.0, 0.0), lam)
    U = u_bubble(p, grid)
    r = grid.r
    w = grid.w
    if name == "lem-uh":
        return integrate(U ** 5 * gb.H)
    if name == "lem-uh2":
        return integrate(U ** 4 * gb.H ** 2)
    if name == "lem-int-a":
        # r^2 * U * (lam^(-1/2)/r - U) written without the 1/r
        bv = sample(grid, b).values
        return 4 * PI * float(np.sum(w * bv * U.values * (lam ** -0.5 * r - U.values * r * r)))
    if name in ("nablapu", "pu6", "num1", "num2"):
        basis = zero_mode_basis(p, grid, greens0=g0)
        if name == "nablapu":
            return basis.norms[0] ** 2
        if name == "pu6":
            return integrate(basis.PU ** 6)
        if name == "num1":
            return basis.norms[0] ** 2 / lam ** 2
        return basis.norms[1] ** 2
    if name == "num5":
        return integrate(U ** 4 * du_dlam(p, grid))
    raise ValueError(name)


def _lem_v(sweep, grid, gb, tol_ratio=2.0):
    """Envelope check for the two bubble/Green's-function distance bounds."""
    r = grid.r
    w = grid.w
    H = gb.H.values
    n1, n2 = [], []
    for lam in sweep:
        s = np.sqrt(1.0 + (lam * r) ** 2)
        # r * (1/r - lam/s) = 1/(s (s + lam r))
        rk = 1.0 / (s * (s + lam * r))
        with np.errstate(divide="ignore", invalid="ignore"):
            k65 = np.where(r > 0, np.abs(rk) ** 1.2 * r ** 0.8, 0.0)
        n1.append(lam ** -0.5 * (4 * PI * np.sum(w * k65)) ** (5.0 / 6.0))
        # r^2 * [-(1/r^2 - lam^2/(1+lam^2 r^2)) + 2 H (1/r - lam/s)] / lam
        term = (-1.0 / s ** 2 + 2.0 * H * r * rk) / lam
        n2.append(4 * PI * np.sum(w * np.abs(term)))
    sweep = np.asarray(sweep, float)
    e1 = np.asarray(n1) * sweep ** 2
    e2 = np.asarray(n2) * sweep ** 2 / np.log(sweep)
    ok = e1.max() / e1.min() <= tol_ratio and e2.max() / e2.min() <= tol_ratio
    return ExpansionReport("lem-V", sweep, np.asarray(n2), sweep ** -2 * np.log(sweep), (-2.0,),
                           np.array([float(np.mean(e2))]), -2.0, math.nan, e2 / e2.mean() - 1.0,
                           tol_ratio, bool(ok), {"l65_envelope": e1, "l1_envelope": e2,
                                                 "l65_norms": np.asarray(n1)})


def validate_lemma(name, sweep=DEFAULT_SWEEP, *, b=None, grid=None, n=512, R=1.0, tol=None,
                   abs_floor=1e-2):
    """Fit the leading coefficient of one expansion over a scale sweep on a
    ball with the bubble at its center.

    ``b`` is the (radial) potential entering the Green's function; default
    ``-pi^2/4`` for ``lem-int-a`` and ``0`` otherwise.
    """
    sweep = np.asarray(sorted(float(s) for s in sweep))
    if len(sweep) < 4:
        raise InsufficientSweep("lemma validation needs at least 4 sweep points")
    if name not in LEMMAS:
        raise ValueError(f"unknown lemma {name!r}; expected one of {LEMMAS}")
    grid = grid or RadialGrid(R, n)
    if not isinstance(grid, RadialGrid):
        raise NotImplementedError("lemma validators run on radial grids")
    if b is None:
        b = -PI ** 2 / 4 if name == "lem-int-a" else 0.0
    gb = solve_greens_radial(b, grid=grid)
    g0 = solve_greens_radial(0.0, grid=grid, check=False)
    if name == "lem-V":
        return _lem_v(sweep, grid, gb)
    b_center = float(sample(grid, b).values[0])
    powers, target, pc, pred_fn, dtol = _lemma_spec(name, b_center, gb.phi, g0.phi, grid.radius)
    tol = dtol if tol is None else tol
    vals = np.array([_lemma_value(name, lam, grid, b, gb, g0) for lam in sweep])
    fit = fit_coefficients(sweep, vals, powers)
    fitted = fit.coefficients[list(powers).index(target)]
    pred = np.array([pred_fn(l) for l in sweep])
    A = np.column_stack([sweep ** p for p in powers])
    resid = (A @ fit.coefficients - vals) / np.maximum(np.abs(vals), 1e-300)
    ok = _coef_pass(fitted, pc, tol, abs_floor)
    return ExpansionReport(name, sweep, vals, pred, powers, fit.coefficients, target, pc, resid,
                           tol, bool(ok), {"phi_b": gb.phi, "phi_0": g0.phi, "b_center": b_center})


# --------------------------------------------------------------------------
# trial-function sweep
# --------------------------------------------------------------------------

def trial_sweep(lams=(50.0, 100.0, 200.0), *, a=-PI ** 2 / 4, V=0.0, eps=0.0, x=(0.0, 0.0, 0.0),
                grid=None, n=512, R=1.0, powers=(-1.0, -2.0, -3.0), tol=0.10, c1_tol=0.05):
    """Fit ``rayleigh(psi) - S`` against inverse powers of the scale and
    compare with the predicted ``1/lam`` and ``1/lam^2`` coefficients.

    The default model carries a ``1/lam^3`` column; with three sweep points
    it is then solved exactly.
    """
    lams = np.asarray(sorted(float(l) for l in lams))
    if len(lams) < 3:
        raise InsufficientSweep("trial sweep needs at least 3 points")
    grid = grid or RadialGrid(R, n)
    S = sobolev_constant()
    if isinstance(grid, RadialGrid):
        ga = solve_greens_radial(a, grid=grid)
        g0 = solve_greens_radial(0.0, grid=grid, check=False)
        q = _q_or_zero(ga, V)
    else:
        ga = solve_greens_grid(a, x, grid)
        g0 = solve_greens_grid(0.0, x, grid, check=False)
        q = _q_or_zero(ga, V)
        x = tuple(ga.pole)
    ax = float(sample(grid, a).values.flat[0]) if isinstance(grid, RadialGrid) else \
        float(ga.a.values[ga.info["node"]])
    vals = []
    for lam in lams:
        p = BubbleParams(x, lam)
        psi = psi_trial(p, grid, ga, g0)
        vals.append(rayleigh(psi, a, V, eps) - S)
    vals = np.asarray(vals)
    fit = fit_coefficients(lams, vals, powers, allow_exact=True)
    c1p, c2p = quotient_coefficients(ga.phi, ax, q, eps)
    idx = list(fit.powers)
    c1 = fit.coefficients[idx.index(-1.0)]
    c2 = fit.coefficients[idx.index(-2.0)]
    pred = predict_quotient(lams, ga.phi, ax, q, eps) - S
    ok = _coef_pass(c2, c2p, tol, 0.0) and abs(c1 - c1p) <= c1_tol
    A = np.column_stack([lams ** p for p in fit.powers])
    resid = (A @ fit.coefficients - vals) / np.maximum(np.abs(vals), 1e-300)
    return ExpansionReport("trial-quotient", lams, vals, pred, fit.powers, fit.coefficients, -2.0,
                           c2p, resid, tol, bool(ok),
                           {"c1": c1, "c1_predicted": c1p, "c1_tol": c1_tol, "phi_a": ga.phi,
                            "a_x": ax, "q_v": q})


def _q_or_zero(greens, V):
    from .greens import q_v
    if np.isscalar(V) and V == 0:
        return 0.0
    return q_v(greens, V)
