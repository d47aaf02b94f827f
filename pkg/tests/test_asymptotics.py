import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critsob import (EmptyZeroSet, InsufficientSweep, SingularDesign,
                     fit_coefficients, predict_denominator, predict_limit, predict_numerator,
                     predict_quotient, predict_scale, sobolev_constant, trial_sweep, validate_lemma)
from critsob.asymptotics import LEMMAS, POSITIVE_REGIME, constants_table, quotient_coefficients

PI = math.pi
A = -PI ** 2 / 4
S = sobolev_constant()


# constants -------------------------------------------------------------------

def test_sobolev_constant_and_table():
    assert S == pytest.approx(5.47790, abs=5e-6)
    t = constants_table()
    assert t["bubble_l6_mass"] == pytest.approx(PI ** 2 / 4, rel=1e-15)
    assert t["bubble_dirichlet"] == pytest.approx(3 * PI ** 2 / 4, rel=1e-15)
    assert t["quotient_prefactor"] == pytest.approx(0.74004, abs=5e-6)


# predictors ------------------------------------------------------------------

def test_critical_ball_quotient_prediction():
    assert predict_quotient(100.0, 0.0, A) == pytest.approx(S + 36.044e-4, abs=1e-7)
    assert predict_quotient(100.0, 0.0, A) == pytest.approx(5.48150, abs=1e-5)


def test_predictors_without_corrections():
    for lam in (10.0, 1e3):
        assert predict_numerator(lam, 0.0, 0.0) == 3 * PI ** 2 / 4
        assert predict_denominator(lam, 0.0, 0.0) == PI ** 2 / 4
        assert predict_quotient(lam, 0.0, 0.0) == S


def test_quotient_linear_in_eps():
    c = (S / 3) ** -0.5
    for eps in (0.01, 0.1, 0.5):
        d = predict_quotient(50.0, 0.2, A, -2 * PI, eps) - predict_quotient(50.0, 0.2, A, -2 * PI, 0.0)
        assert d == pytest.approx(c * -2 * PI * eps / 50.0, rel=1e-12)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(phi=st.floats(-1, 1), a=st.floats(-5, 5), q=st.floats(-10, 10), k=st.floats(0, 20))
def test_quotient_is_reexpanded_ratio(phi, a, q, k):
    # with eps of order 1/lam the gap to N / D^(1/3) shrinks like lam^-3
    errs = []
    for lam in (1e3, 2e3, 4e3):
        eps = k / lam
        ratio = predict_numerator(lam, phi, a, q, eps) / predict_denominator(lam, phi, a) ** (1 / 3)
        errs.append(abs(predict_quotient(lam, phi, a, q, eps) - ratio) * lam ** 3)
    assert errs[-1] <= 1.5 * errs[0] + 1e-3


def test_quotient_coefficients_consistent_with_predictor():
    c1, c2 = quotient_coefficients(0.3, A, -1.0, 0.05)
    lam = 70.0
    assert predict_quotient(lam, 0.3, A, -1.0, 0.05) == pytest.approx(S + c1 / lam + c2 / lam ** 2, rel=1e-14)


# limit and scale -------------------------------------------------------------

def test_predict_limit_ball():
    p = predict_limit([((0, 0, 0), A, -2 * PI)])
    assert p.coefficient == pytest.approx(-0.14996, abs=5e-6)
    assert p.coefficient == pytest.approx(-((3 / S) ** 0.5) * 2 / PI ** 2, rel=1e-14)
    assert p.ratio == -p.coefficient
    assert np.array_equal(p.x0, np.zeros(3))
    assert predict_scale(A, -2 * PI) == pytest.approx(PI ** 3 / 2, rel=1e-15)
    assert predict_scale(A, -2 * PI) == pytest.approx(15.5031, abs=5e-5)


def test_predict_limit_positive_potential():
    p = predict_limit([((0, 0, 0), A, 2 * PI)])
    assert p.coefficient is None and p.regime == POSITIVE_REGIME


def test_predict_limit_empty():
    with pytest.raises(EmptyZeroSet):
        predict_limit([])


def test_predict_limit_picks_the_maximizer():
    samples = [((0, 0, 0), A, -1.0), ((0.1, 0, 0), A, -3.0), ((0.2, 0, 0), A, 5.0)]
    p = predict_limit(samples)
    assert np.allclose(p.x0, (0.1, 0, 0))


@settings(max_examples=30, deadline=None, derandomize=True)
@given(c=st.floats(0.01, 100.0), q=st.floats(-20.0, -0.01), a=st.floats(-10.0, -0.01))
def test_limit_scales_quadratically(c, q, a):
    base = predict_limit([((0, 0, 0), a, q)]).coefficient
    assert predict_limit([((0, 0, 0), a, c * q)]).coefficient == pytest.approx(c * c * base, rel=1e-12)


# regression ------------------------------------------------------------------

def test_fit_exact_model():
    xs = np.array([1.0, 2.0, 5.0, 9.0])
    f = fit_coefficients(xs, 3 + 5 / xs, (0, -1))
    assert np.allclose(f.coefficients, (3, 5), atol=1e-13)
    assert f.residual <= 1e-14


def test_fit_noisy_model():
    rng = np.random.default_rng(3)
    xs = np.array([25.0, 50.0, 100.0, 200.0, 400.0])
    ys = PI ** 2 / 4 - 8 * PI / xs + 1e-8 * rng.standard_normal(xs.size)
    f = fit_coefficients(xs, ys, (0, -1))
    assert np.allclose(f.coefficients, (PI ** 2 / 4, -8 * PI), atol=1e-6)


def test_fit_errors():
    with pytest.raises(SingularDesign):
        fit_coefficients([1.0, 1.0, 2.0], [1.0, 1.0, 2.0], (0, -1))
    with pytest.raises(SingularDesign):
        fit_coefficients([1.0, 2.0], [1.0, 2.0], (0, -1))
    with pytest.raises(SingularDesign):
        fit_coefficients([-1.0, 2.0, 3.0], [1.0, 2.0, 3.0], (0, -1))
    f = fit_coefficients([1.0, 2.0], [4.0, 3.0], (0, -1), allow_exact=True)
    assert np.allclose(f.coefficients, (2, 2))


@settings(max_examples=25, deadline=None, derandomize=True)
@given(c=st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_fit_reproduces_within_residual(c):
    xs = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
    ys = c[0] + c[1] / xs + c[2] / xs ** 2 + np.sin(xs) * 1e-3
    f = fit_coefficients(xs, ys, (0, -1, -2))
    model = np.column_stack([xs ** p for p in f.powers]) @ f.coefficients
    assert np.max(np.abs(model - ys)) <= f.residual * np.max(np.abs(ys)) * (1 + 1e-12) + 1e-300


# lemma validators ------------------------------------------------------------

@pytest.mark.parametrize("name", [n for n in LEMMAS if n not in ("lem-V", "pu6")])
def test_lemma_passes(name):
    rep = validate_lemma(name, n=512)
    assert rep.passed, (name, rep.fitted_coefficient, rep.predicted_coefficient)
    A_ = np.column_stack([rep.sweep ** p for p in rep.powers])
    assert np.allclose(A_ @ rep.coefficients, rep.numeric, rtol=np.max(np.abs(rep.relative_residuals)) + 1e-12)


def test_lemma_pu6_passes_on_leading_correction():
    rep = validate_lemma("pu6", n=512)
    assert rep.passed
    assert rep.fitted_coefficient == pytest.approx(-8 * PI, rel=0.05)


def test_lemma_distance_bounds_envelope():
    rep = validate_lemma("lem-V", n=512)
    assert rep.passed
    assert rep.extra["l65_envelope"].max() / rep.extra["l65_envelope"].min() <= 2.0


def test_lemma_uh_example():
    rep = validate_lemma("lem-uh", n=512)
    assert rep.predicted_coefficient == pytest.approx(4 * PI / 3, rel=1e-10)
    assert rep.fitted_coefficient == pytest.approx(4.18879, rel=0.05)


def test_lemma_int_a_example():
    rep = validate_lemma("lem-int-a", n=512)
    assert rep.predicted_coefficient == pytest.approx(-17.696, abs=5e-3)
    assert abs(rep.ratio - 1) <= 0.10


def test_lemma_uh2_critical_coefficient_vanishes():
    rep = validate_lemma("lem-uh2", b=A, n=512)
    assert abs(rep.fitted_coefficient) <= 1e-2
    assert rep.passed


def test_lemma_input_errors():
    with pytest.raises(InsufficientSweep):
        validate_lemma("lem-uh", sweep=(25.0, 50.0, 100.0))
    with pytest.raises(ValueError):
        validate_lemma("nope")


def test_lemma_residuals_decay():
    # o(.) claims: consecutive residuals against the truncation shrink
    rep = validate_lemma("nablapu", n=512)
    gaps = np.abs(rep.numeric - rep.predicted) * rep.sweep
    assert np.all(np.diff(gaps) < 0)


# trial sweep -----------------------------------------------------------------

def test_trial_sweep_critical_ball():
    rep = trial_sweep(n=512)
    assert rep.passed
    assert rep.predicted_coefficient == pytest.approx(36.044, abs=1e-3)
    assert abs(rep.ratio - 1) <= 0.10
    assert abs(rep.extra["c1"]) <= 0.05


def test_trial_sweep_needs_three_points():
    with pytest.raises(InsufficientSweep):
        trial_sweep((50.0, 100.0))
