import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comonotone_vi.bounds import (
    LEMMA_C8_MATRIX,
    REPORT_CSV_COLUMNS,
    BoundSpec,
    RegimeError,
    bound_value,
    check_trace,
    counterexample_certificates,
    eg_bound,
    eg_potential,
    eg_step_slacks,
    lemma_c8_matrix_certificate,
    og_bound,
    og_potential,
    og_step_slacks,
    pp_bound,
    report_csv_rows,
    report_from_csv_rows,
    report_from_dict,
    report_to_dict,
    stepsize_admissible,
)
from comonotone_vi.formats import csv_text, read_csv
from comonotone_vi.operators import LinearOperator, make_pp_worst_case, make_scaled_rotation
from comonotone_vi.solvers import StepSizes, run_eg, run_og, run_pp
from support import certified_operator, random_unit

seeds = st.integers(0, 2**32 - 1)


# -- closed forms ------------------------------------------------------------------

def test_pp_values():
    assert pp_bound("last_iterate", 0.5, 0.1, 1.0, 10) == pytest.approx(1 / 6, rel=1e-15)
    assert pp_bound("best_iterate", 0.5, 0.1, 1.0, 10) == pytest.approx(1 / 6, rel=1e-15)
    assert pp_bound("lower_bound", 0.5, 0.1, 1.0, 10) == pytest.approx(1 / (0.5 * 0.3 * 10 * 1.1**11), rel=1e-14)
    # rho = 0 gives the monotone rate R^2/N on squared steps; rho > 0 only adds gamma/(gamma - 2 rho)
    assert pp_bound("last_iterate", 0.5, 0.0, 2.0, 8) == pytest.approx(4 / 8)
    ratio = pp_bound("last_iterate", 0.5, 0.1, 2.0, 8) / pp_bound("last_iterate", 0.5, 0.0, 2.0, 8)
    assert ratio == pytest.approx(0.5 / 0.3)


def test_eg_values():
    assert eg_bound("last_iterate", 0.5, 0.5, 0.125, 1.0, 1.0, 100) == pytest.approx(28 / 45, rel=1e-15)
    assert eg_bound("last_iterate", 0.3, 0.3, 0.0, 1.0, 2.0, 7) == pytest.approx(28 * 4 / (7 * 0.09))
    assert eg_bound("best_iterate", 0.5, 0.2, 0.1, 1.0, 1.0, 4) == pytest.approx(1 / (0.5 * 0.2 * 0.75 * 5))
    assert eg_bound("best_iterate_tilde", 1.0, 0.2, 0.1, 1.0, 1.0, 4) == pytest.approx(1 / (0.2 * 0.6 * 5))


def test_og_values():
    L = 1.0
    g = 1 / (4 * L)
    assert og_bound("best_iterate", g, g, 0.0, L, 1.0, 9) == pytest.approx(64 / (3 * 10))
    assert og_bound("last_iterate", 10 / 31, 10 / 31, 5 / 62, L, 1.0, 0) == pytest.approx(717 / (800 * (10 / 31) ** 2))
    assert math.isinf(og_bound("best_iterate", 0.7, 0.3, 0.1, 1.0, 1.0, 3))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 500))
def test_refined_extragradient_bound_is_tighter(L, a, b, N):
    rho = a / (8 * L)
    g = 4 * rho + b * (1 / (2 * L) - 4 * rho)
    if g <= 0:
        return
    refined = eg_bound("last_iterate_refined", g, g, rho, L, 1.0, N)
    coarse = eg_bound("last_iterate", g, g, rho, L, 1.0, N)
    assert refined <= coarse * (1 + 1e-12)


@pytest.mark.parametrize(
    "method,kind,args",
    [
        ("pp", "best_iterate", (0.5, 0.5, 0.1, None, 1.0, 7)),
        ("pp", "lower_bound", (0.5, 0.5, 0.1, None, 1.0, 7)),
        ("eg", "best_iterate", (0.5, 0.2, 0.1, 1.0, 1.0, 7)),
        ("eg", "last_iterate_refined", (0.4, 0.4, 0.1, 1.0, 1.0, 7)),
        ("og", "best_iterate", (0.5, 0.2, 0.1, 1.0, 1.0, 7)),
        ("og", "last_iterate", (0.3, 0.3, 0.05, 1.0, 1.0, 7)),
    ],
)
def test_bounds_scale_with_r_squared(method, kind, args):
    g1, g2, rho, L, R, N = args
    a = bound_value(method, kind, g1, g2, rho, L, R, N)
    b = bound_value(method, kind, g1, g2, rho, L, math.sqrt(2) * R, N)
    assert b == pytest.approx(2 * a, rel=1e-14)


# -- regimes -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "call,text",
    [
        (lambda: pp_bound("last_iterate", 0.2, 0.1, 1.0, 5), "gamma > 2*rho"),
        (lambda: pp_bound("lower_bound", 0.21, 0.1, 1.0, 1), "N >= max"),
        (lambda: pp_bound("last_iterate", 0.5, 0.1, 1.0, 0), "N"),
        (lambda: eg_bound("best_iterate", 1.0, 0.2, 0.1, 1.0, 1.0, 5), "gamma1 < 1/L"),
        (lambda: eg_bound("best_iterate_tilde", 1.0, 0.8, 0.1, 1.0, 1.0, 5), "gamma2 < gamma1 - 2*rho"),
        (lambda: eg_bound("last_iterate", 0.4, 0.3, 0.05, 1.0, 1.0, 5), "gamma1 == gamma2"),
        (lambda: eg_bound("last_iterate", 0.4, 0.4, 0.13, 1.0, 1.0, 5), "rho <= 1/(8L)"),
        (lambda: eg_bound("last_iterate", 0.3, 0.3, 0.1, 1.0, 1.0, 5), "4*rho <= gamma"),
        (lambda: eg_bound("last_iterate", 0.5, 0.5, 0.1, 1.0, 1.0, 0), "N"),
        (lambda: og_bound("best_iterate", 0.6, 0.5, 0.1, 1.0, 1.0, 5), "gamma2 <= 1/L - gamma1"),
        (lambda: og_bound("last_iterate", 0.33, 0.33, 0.05, 1.0, 1.0, 5), "gamma <= 10/(31L)"),
    ],
)
def test_regime_errors_name_the_inequality(call, text):
    with pytest.raises(RegimeError) as exc:
        call()
    assert text in str(exc.value)


def test_boundary_inequality_types():
    # gamma1 = 1/L is excluded from the best-iterate regime but allowed for the tilde variant
    eg_bound("best_iterate_tilde", 1.0, 0.5, 0.1, 1.0, 1.0, 3)
    with pytest.raises(RegimeError):
        eg_bound("best_iterate", 1.0, 0.5, 0.1, 1.0, 1.0, 3)
    # gamma2 = gamma1 - 2 rho is allowed for best, not for tilde
    eg_bound("best_iterate", 0.5, 0.3, 0.1, 1.0, 1.0, 3)
    with pytest.raises(RegimeError):
        eg_bound("best_iterate_tilde", 0.5, 0.3, 0.1, 1.0, 1.0, 3)
    # closed endpoints of the last-iterate regimes
    eg_bound("last_iterate", 0.5, 0.5, 0.125, 1.0, 1.0, 3)
    og_bound("last_iterate", 10 / 31, 10 / 31, 5 / 62, 1.0, 1.0, 3)


def test_stepsize_admissible_examples():
    rep = stepsize_admissible("pp", 1.0, None, 0.5, None)
    assert rep.guarantees == [] and rep.counterexample.startswith("negative-scaling")
    rep = stepsize_admissible("eg", 0.5, 0.5, 0.1, 1.0)
    assert "last_iterate" in rep.guarantees and "last_iterate_refined" in rep.guarantees
    rep = stepsize_admissible("eg", 0.5, 0.5, 0.5, 1.0)
    assert rep.guarantees == [] and rep.counterexample.startswith("rotation")
    rep = stepsize_admissible("og", 1.5, 0.5, 0.1, 1.0)
    assert rep.counterexample.startswith("scaling")
    assert set(rep.to_dict()) == {"method", "guarantees", "counterexample", "violations"}


# -- counter-example certificates ----------------------------------------------------

def test_counterexample_values():
    c = counterexample_certificates("eg", 1.0, 1.0, 0.5)
    assert c["spectral_quantity"] == pytest.approx(1.75, rel=1e-15) and c["diverges"]
    c = counterexample_certificates("og", 1.0, 0.5, 0.5)
    assert c["spectral_quantity"] == pytest.approx(1.53125 + math.sqrt(1.53125**2 - 0.25), rel=1e-15)
    assert c["spectral_quantity"] == pytest.approx(2.9785670221136762, rel=1e-15)
    c = counterexample_certificates("eg", 1.0, 1.5, 0.3)
    assert c["operator"] == "scaling"
    assert c["spectral_quantity"] == pytest.approx((1 - 0.3 + 0.45) ** 2) and c["diverges"]


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_eg_rotation_modulus_matches_step_eigenvalues(g1, g2):
    c = counterexample_certificates("eg", 1.0, g1, g2)
    assert c["spectral_radius"] ** 2 == pytest.approx(c["spectral_quantity"], rel=1e-12)
    assert c["expansive"] and c["diverges"]


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_og_norm_dominates_spectral_radius(g1, g2):
    c = counterexample_certificates("og", 1.0, g1, g2)
    assert c["spectral_radius"] ** 2 <= c["spectral_quantity"] * (1 + 1e-12)
    assert c["expansive"]


def test_og_has_stable_pairs_under_its_counterexample():
    # ||B||^2 > 1 bounds one step only; the iteration itself can still contract.
    c = counterexample_certificates("og", 1.0, 0.8, 0.1)
    assert c["expansive"] and not c["diverges"]
    assert c["spectral_radius"] == pytest.approx(0.9595, abs=1e-4)
    tr = run_og(make_scaled_rotation(2 * math.pi / 3, 1.0), np.array([1.0, 0.0]), StepSizes(0.8, 0.1), 400)
    assert not tr.diverged and np.linalg.norm(tr.x[-1]) < 1e-3


# -- the rational certificate --------------------------------------------------------

def test_lemma_matrix_entries():
    F = Fraction
    expected = [
        [F(-1, 3), F(-1, 2), F(1, 2), F(1, 3)],
        [F(-1, 2), F(-3, 2), F(1), F(1)],
        [F(1, 2), F(1), F(-4927, 5766), F(-1861, 2883)],
        [F(1, 3), F(1), F(-1861, 2883), F(-661, 961)],
    ]
    assert [[F(v) for v in row] for row in LEMMA_C8_MATRIX] == expected


def test_lemma_matrix_perturbation_breaks_it():
    m = [list(row) for row in LEMMA_C8_MATRIX]
    m[3][3] = Fraction(0)
    cert = lemma_c8_matrix_certificate(m)
    assert not cert["holds"] and cert["exact"] is False


def test_lemma_matrix_reduced_direction():
    m = LEMMA_C8_MATRIX
    v = [0, 0, 1, -1]
    q = sum(Fraction(m[i][j]) * v[i] * v[j] for i in range(4) for j in range(4))
    assert q == Fraction(-4927, 5766) - Fraction(661, 961) + 2 * Fraction(1861, 2883)
    assert q <= -Fraction(2, 100)


def test_lemma_matrix_has_an_exact_null_direction():
    # (1, 1, 1, 1) is annihilated by M and by D, so the largest eigenvalue is exactly zero
    # and the floating point value only carries rounding.
    m = LEMMA_C8_MATRIX
    assert all(sum(Fraction(v) for v in row) == 0 for row in m)
    cert = lemma_c8_matrix_certificate()
    assert abs(cert["max_eigenvalue"]) <= 1e-12 and cert["exact"] is True
    assert lemma_c8_matrix_certificate(margin=Fraction(1, 50))["exact"] is True


# -- one-step inequalities and potentials --------------------------------------------

def _rel_min(slack, scale):
    return float(np.min(slack / np.maximum(scale, 1e-300))) if slack.size else 0.0


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_extragradient_step_inequalities(seed):
    rng = np.random.default_rng(seed)
    L = rng.uniform(0.5, 2)
    rho = rng.uniform(0, 1 / (8 * L))
    g = rng.uniform(4 * rho, 1 / (2 * L))
    op = certified_operator(rng, rho, L)
    tr = run_eg(op, random_unit(rng, op.dim), StepSizes(g), 60, reference=np.zeros(op.dim))
    s = eg_step_slacks(tr, rho, L)
    d = np.sum(np.asarray(tr.x) ** 2, axis=1)
    f = np.sum(np.asarray(tr.f_x) ** 2, axis=1)
    assert _rel_min(s["key"], d[:-1]) >= -1e-12
    assert _rel_min(s["norm"], f[:-1]) >= -1e-12
    # unequal stepsizes: the key inequality still holds, the norm one is not defined
    tr = run_eg(op, random_unit(rng, op.dim), StepSizes(g, 0.5 * g), 30, reference=np.zeros(op.dim))
    s = eg_step_slacks(tr, rho, L)
    assert "norm" not in s
    assert _rel_min(s["key"], np.sum(np.asarray(tr.x) ** 2, axis=1)[:-1]) >= -1e-12


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_optimistic_step_inequalities(seed):
    rng = np.random.default_rng(seed)
    L = rng.uniform(0.5, 2)
    rho = rng.uniform(0, 5 / (62 * L))
    g = rng.uniform(4 * rho, 10 / (31 * L))
    op = certified_operator(rng, rho, L)
    tr = run_og(op, random_unit(rng, op.dim), StepSizes(g), 60, reference=np.zeros(op.dim))
    s = og_step_slacks(tr, rho, L)
    d = np.sum(np.asarray(tr.x) ** 2, axis=1)
    assert _rel_min(s["key"], d[:-1]) >= -1e-12
    pot = og_potential(tr, rho, L)
    assert _rel_min(s["psi"], pot.psi[:-1]) >= -1e-12
    assert np.all(pot.psi >= np.sum(np.asarray(tr.f_x)[1:] ** 2, axis=1))


def test_potentials_of_a_stationary_trace_vanish():
    op = LinearOperator(np.array([[0.0, -1.0], [1.0, 0.0]]))
    z = np.zeros(2)
    eg = eg_potential(run_eg(op, z, StepSizes(0.3), 5, reference=z), 0.05, 1.0)
    og = og_potential(run_og(op, z, StepSizes(0.3), 5, reference=z), 0.05, 1.0)
    assert np.all(eg.phi == 0) and eg.monotone
    assert np.all(og.phi == 0) and np.all(og.psi == 0) and og.first_index == 1


def test_potential_at_rho_zero():
    rng = np.random.default_rng(2)
    op = certified_operator(rng, 0.0, 1.0, dim=2)
    g = 0.4
    tr = run_eg(op, random_unit(rng, 2), StepSizes(g), 10, reference=np.zeros(2))
    phi = eg_potential(tr, 0.0, 1.0).phi
    k = np.arange(11)
    direct = np.sum(np.asarray(tr.x) ** 2, axis=1) + k * g**2 * (1 - g**2) * np.sum(np.asarray(tr.f_x) ** 2, axis=1)
    assert phi == pytest.approx(direct, rel=1e-14)


def test_potentials_need_equal_steps_and_matching_method():
    op = LinearOperator(np.eye(2))
    tr = run_eg(op, np.ones(2), StepSizes(0.3, 0.2), 3, reference=np.zeros(2))
    with pytest.raises(RegimeError):
        eg_potential(tr, 0.0, 1.0)
    with pytest.raises(ValueError):
        og_potential(tr, 0.0, 1.0)
    with pytest.raises(ValueError):
        eg_potential(run_eg(op, np.ones(2), StepSizes(0.3), 3), 0.0, 1.0)


# -- proximal point properties -------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seeds)
def test_proximal_point_rates_on_random_operators(seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0, 0.5)
    gamma = rng.uniform(2 * rho, 2 * rho + 2.0) + 1e-3
    op = certified_operator(rng, rho, rng.uniform(0.5, 3.0))
    tr = run_pp(op, random_unit(rng, op.dim), gamma, 40, reference=np.zeros(op.dim))
    steps = np.linalg.norm(np.diff(np.asarray(tr.x), axis=0), axis=1)
    assert np.all(np.diff(steps) <= 1e-12 * steps[:-1] + 1e-300)
    for kind in ("best_iterate", "last_iterate"):
        rep = check_trace(tr, BoundSpec("pp", kind, rho, gamma))
        assert rep.in_regime and rep.satisfied


# -- trace reports -------------------------------------------------------------------

def test_worst_case_trace_against_upper_and_lower_bounds():
    rho, gamma = 0.1, 0.5
    prev = None
    for N in (5, 10, 20, 40):
        op = make_pp_worst_case(rho, gamma, N)
        tr = run_pp(op, np.array([1.0, 0.0]), gamma, N + 1, reference=np.zeros(2))
        up = check_trace(tr, BoundSpec("pp", "last_iterate", rho, gamma, R=1.0))
        assert up.satisfied
        low = check_trace(tr, BoundSpec("pp", "lower_bound", rho, gamma, R=1.0, N=N))
        assert low.lower and low.k.tolist() == [N + 1]
        assert low.margin[0] >= -1e-12 * low.bound[0]
        # after N + 1 steps the last-step ratio to the upper bound sits in [1/4, 1/e]
        ratio = gamma**2 * low.observed[0] / pp_bound("last_iterate", gamma, rho, 1.0, N)
        assert 0.25 <= ratio <= 1 / math.e + 1e-12
        if prev is not None:
            assert up.margin[-1] < prev
        prev = up.margin[-1]


def test_stationary_trace_margin_equals_bound():
    op = LinearOperator(np.eye(2))
    tr = run_eg(op, np.zeros(2), StepSizes(0.4), 5, reference=np.zeros(2))
    rep = check_trace(tr, BoundSpec("eg", "last_iterate", 0.05, 0.4, L=1.0, R=1.0))
    assert rep.satisfied and np.array_equal(rep.margin, rep.bound)


def test_out_of_regime_counterexample_is_flagged():
    L, rho = 1.0, 0.5
    op = make_scaled_rotation(2 * math.pi / 3, L)
    tr = run_eg(op, np.array([1.0, 0.0]), StepSizes(0.5), 60, reference=np.zeros(2))
    rep = check_trace(tr, BoundSpec("eg", "last_iterate", rho, 0.5, L=L))
    assert not rep.in_regime and "rho <= 1/(8L)" in rep.regime_message
    assert not rep.satisfied and rep.first_violation() is not None


def test_check_trace_rejects_mismatch():
    op = LinearOperator(np.eye(2))
    tr = run_eg(op, np.ones(2), StepSizes(0.4), 3, reference=np.zeros(2))
    with pytest.raises(RegimeError):
        check_trace(tr, BoundSpec("og", "last_iterate", 0.0, 0.4, L=1.0))
    with pytest.raises(RegimeError):
        check_trace(tr, BoundSpec("eg", "last_iterate", 0.0, 0.3, L=1.0))


def test_report_round_trips():
    rng = np.random.default_rng(5)
    op = certified_operator(rng, 0.05, 1.0, dim=3)
    tr = run_og(op, random_unit(rng, 3), StepSizes(0.3), 20, reference=np.zeros(3))
    rep = check_trace(tr, BoundSpec("og", "last_iterate", 0.05, 0.3, L=1.0))
    back = report_from_dict(report_to_dict(rep))
    assert np.array_equal(back.observed, rep.observed) and np.array_equal(back.bound, rep.bound)
    assert back.satisfied == rep.satisfied
    header, rows = read_csv(csv_text(REPORT_CSV_COLUMNS, report_csv_rows(rep)))
    again = report_from_csv_rows(header, rows, "og", "last_iterate", "F")
    assert np.array_equal(again.k, rep.k)
    assert np.array_equal(again.observed, rep.observed) and np.array_equal(again.bound, rep.bound)
