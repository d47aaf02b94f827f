"""Ball oracle suite: every closed-form check on the unit ball with
``a = -pi^2/4``, bundled for the command line."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .asymptotics import (LEMMAS, predict_limit, predict_scale, sobolev_constant,
                          trial_sweep, validate_lemma)
from .bubbles import BubbleParams, coercivity_min_eig
from .fields import RadialGrid, UnitBall
from .greens import q_v, solve_greens_radial
from .minimize import epsilon_sweep, fit_decomposition

A_CRIT = -math.pi ** 2 / 4


@dataclass
class Check:
    name: str
    value: float
    target: float
    tol: float
    passed: bool
    seconds: float
    note: str = ""


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def greens_oracle(n=256):
    gd, sec = _timed(lambda: solve_greens_radial(A_CRIT, n=n))
    r = gd.grid.r
    sel = (r >= 0.05) & (r <= 0.95)
    exact = np.cos(math.pi * r[sel] / 2) / r[sel]
    err = float(np.max(np.abs(gd.green_values()[sel] / exact - 1.0)))
    return [Check("greens_relative_error", err, 0.0, 1e-6, err <= 1e-6 and sec < 1.0, sec),
            Check("robin_value_center", gd.phi, 0.0, 1e-8, abs(gd.phi) <= 1e-8, sec)]


def qv_oracle(n=256):
    def run():
        gd = solve_greens_radial(A_CRIT, n=n)
        return q_v(gd, -1.0)
    val, sec = _timed(run)
    return [Check("q_v", val, -2 * math.pi, 1e-5, abs(val + 2 * math.pi) <= 1e-5 and sec < 1.0, sec)]


def trial_oracle(n=512):
    rep, sec = _timed(lambda: trial_sweep((50.0, 100.0, 200.0), a=A_CRIT, n=n))
    c2 = rep.fitted_coefficient
    ok2 = abs(c2 / rep.predicted_coefficient - 1) <= 0.10 and sec < 30
    c1 = rep.extra["c1"]
    return [Check("trial_lambda^-2_coefficient", c2, rep.predicted_coefficient, 0.10, ok2, sec),
            Check("trial_lambda^-1_coefficient", c1, 0.0, 0.05, abs(c1) <= 0.05, sec)]


def lemma_oracle(n=512, names=("lem-uh", "lem-uh2", "lem-int-a", "nablapu", "pu6", "num2", "num5")):
    out = []
    t0 = time.perf_counter()
    for name in names:
        rep, sec = _timed(lambda: validate_lemma(name, n=n))
        if name == "lem-V":
            out.append(Check(name, float(rep.coefficients[0]), math.nan, rep.tol, rep.passed, sec))
        else:
            out.append(Check(f"lemma_{name}", rep.fitted_coefficient, rep.predicted_coefficient,
                             rep.tol, rep.passed, sec))
    total = time.perf_counter() - t0
    out.append(Check("lemma_total_runtime", total, 120.0, 0.0, total < 120.0, total))
    return out


def coercivity_oracle(n=256, lam=50.0):
    g = RadialGrid(1.0, n)
    p = BubbleParams((0.0, 0.0, 0.0), lam, UnitBall())
    t0 = time.perf_counter()
    r0 = coercivity_min_eig(p, 0.0, g)
    ra = coercivity_min_eig(p, A_CRIT, g)
    ru = coercivity_min_eig(p, 0.0, g, deflate=False)
    sec = time.perf_counter() - t0
    return [Check("coercivity_a0", r0.rho_min, 4.0 / 7.0, 0.05, r0.rho_min >= 0.52 and sec < 60, sec),
            Check("coercivity_critical", ra.rho_min, 0.0, 0.0, ra.rho_min > 0, sec),
            Check("coercivity_undeflated", ru.rho_min, 0.0, 0.0, ru.rho_min < 0, sec)]


def sweep_oracle(n=512, eps=(0.08, 0.04, 0.02)):
    g = RadialGrid(1.0, n)
    S = sobolev_constant()
    sw, sec = _timed(lambda: epsilon_sweep(g, A_CRIT, -1.0, eps))
    pred = predict_limit([((0, 0, 0), A_CRIT, -2 * math.pi)])
    fit, sec2 = _timed(lambda: fit_decomposition(sw.results[-1].u, A_CRIT, eps=min(eps)))
    scale = predict_scale(A_CRIT, -2 * math.pi)
    el = fit.observables["eps_lam"]
    L = sw.extrapolated
    out = [Check("S_est_below_S", float(np.max(sw.S_est - S)), 0.0, 0.0, bool(np.all(sw.S_est < S)), sec),
           Check("limit_ratio", L, pred.ratio, 0.0, 0.10 <= L <= 0.20, sec),
           Check("limit_coefficient", -L, pred.coefficient, 0.0, 0.10 <= L <= 0.20, sec),
           Check("ratio_trend_monotone", float(sw.ratios[-1]), pred.ratio, 0.0, sw.monotone_trend, sec),
           Check("eps_lambda", el, scale, 0.3, 0.7 * scale <= el <= 1.3 * scale, sec2)]
    swp, secp = _timed(lambda: epsilon_sweep(g, A_CRIT, 1.0, eps))
    last = float(swp.ratios[-1])
    dec = bool(np.all(np.diff(swp.ratios) <= 0))
    out.append(Check("positive_regime_last_ratio", last, 0.0, 0.02, last <= 0.02 and dec, secp,
                     "ratios non-increasing" if dec else "ratios not monotone"))
    return out


def run_all(radial_n=256, minimize_n=512):
    checks = []
    checks += greens_oracle(radial_n)
    checks += qv_oracle(radial_n)
    checks += trial_oracle(minimize_n)
    checks += lemma_oracle(minimize_n)
    checks += coercivity_oracle(radial_n)
    checks += sweep_oracle(minimize_n)
    return checks
