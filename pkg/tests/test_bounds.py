import dataclasses
import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kidneyfair.bounds import (
    PUBLISHED,
    BoundInputs,
    bound_series,
    compare_published,
    geometric_closed,
    geometric_sum,
    loss_sens_bound,
    loss_time_bound,
    sens_terms,
    tradeoff_bound,
    us_preset,
)
from kidneyfair.config import US_2017
from kidneyfair.model import BloodType, PairRecord
from kidneyfair.sim import run

from .oracles import sens_bound_by_recursion


def random_inputs(rng: random.Random) -> BoundInputs:
    return BoundInputs(
        n=rng.uniform(1, 500), mu_O=rng.uniform(0.05, 0.6), mu_AB=rng.uniform(0.01, 0.3),
        mu_H=rng.uniform(0.01, 1), mu_C=rng.uniform(0, 1), rho_C=rng.uniform(0.01, 1),
        rho_NC=rng.uniform(0.01, 1), eta_C=rng.uniform(0, 1),
    )


def eq7(b):
    h = b.n * b.mu_O * b.mu_AB * b.mu_H
    return b.rho_C * b.mu_C * h + b.rho_NC * (1 - b.mu_C) * h


def eq8(b):
    h = b.n * b.mu_O * b.mu_AB * b.mu_H
    mc, rc, rn, eta = b.mu_C, b.rho_C, b.rho_NC, b.eta_C
    crit = h * mc * (1 - rc) + eta * (1 - mc) * h + h * mc
    noncrit = (1 - mc) * h * (1 - rn) + (1 - mc) * h
    return rc * crit + rn * noncrit


def test_us_preset_constants():
    b = us_preset()
    assert (b.mu_O, b.mu_AB, b.mu_H, b.mu_C, b.rho_C, b.rho_NC, b.eta_C) == (0.44, 0.10, 0.3, 0.14, 0.35, 0.25, 0.09)
    assert b.sens_leftover == pytest.approx(0.0132, rel=1e-12)
    assert b.time_leftover == pytest.approx(0.00616, rel=1e-12)


def test_from_params_matches_preset():
    assert BoundInputs.from_params(US_2017, n=1.0) == us_preset()


@pytest.mark.parametrize("form", ["printed", "recursive"])
def test_tau_zero_reduces_to_one_step_expressions(form):
    rng = random.Random(0)
    for _ in range(50):
        b = random_inputs(rng)
        assert math.isclose(loss_sens_bound(b, 0, form), eq7(b), rel_tol=1e-12)
        assert math.isclose(loss_time_bound(b, 0), b.rho_NC * b.time_leftover, rel_tol=1e-12)
        assert sens_terms(b, 0, form).became_critical == 0.0


def test_recursive_form_matches_one_step_expansion():
    rng = random.Random(1)
    for _ in range(50):
        b = random_inputs(rng)
        assert math.isclose(loss_sens_bound(b, 1, "recursive"), eq8(b), rel_tol=1e-12)


def test_printed_form_differs_from_one_step_expansion():
    # the general-horizon expression counts extra became-critical mass at tau = 1
    b = us_preset()
    assert loss_sens_bound(b, 1, "printed") > eq8(b)


@pytest.mark.parametrize("tau", range(0, 12))
def test_recursive_form_matches_population_recursion(tau):
    rng = random.Random(tau)
    for _ in range(20):
        b = random_inputs(rng)
        expected = sens_bound_by_recursion(b.sens_leftover, b.mu_C, b.rho_C, b.rho_NC, b.eta_C, tau)
        assert math.isclose(loss_sens_bound(b, tau, "recursive"), expected, rel_tol=1e-12)


def test_us_time_bound_at_ten():
    expected = 0.25 * 0.00616 * sum(0.75**k for k in range(11))
    assert loss_time_bound(us_preset(), 10) == pytest.approx(expected, rel=1e-12)
    assert abs(loss_time_bound(us_preset(), 10) - 0.00590) < 1e-5


def test_us_numerator_matches_published():
    tr = tradeoff_bound(us_preset(), 10)
    assert abs(tr.numerator - PUBLISHED["numerator"]) / PUBLISHED["numerator"] < 0.01


def test_published_comparison_reports_denominator_disagreement():
    by_name = {c.quantity: c for c in compare_published()}
    assert by_name["numerator"].agrees()
    assert not by_name["denominator"].agrees()
    assert not by_name["ratio"].agrees()
    assert by_name["denominator"].published == 0.114249


def test_probe_tau_twenty():
    r10, r20 = tradeoff_bound(us_preset(), 10).ratio, tradeoff_bound(us_preset(), 20).ratio
    assert 0 < r10 < 1 and 0 < r20 < 1


@given(st.floats(0.001, 1.0), st.integers(0, 60))
def test_geometric_identity(rho, tau):
    lhs = math.fsum((1 - rho) ** k * rho for k in range(tau + 1))
    assert lhs == pytest.approx(1 - (1 - rho) ** (tau + 1), rel=1e-9, abs=1e-12)
    assert geometric_sum(1 - rho, tau) == pytest.approx(geometric_closed(rho, tau), rel=1e-9)


def test_geometric_closed_at_zero_rate():
    assert geometric_closed(0.0, 4) == 5.0


@pytest.mark.parametrize("form", ["printed", "recursive"])
def test_bounds_linear_in_n(form):
    rng = random.Random(2)
    for _ in range(30):
        b = random_inputs(rng)
        tau = rng.randint(0, 15)
        d = b.scaled(2 * b.n)
        assert loss_sens_bound(d, tau, form) == pytest.approx(2 * loss_sens_bound(b, tau, form), rel=1e-12)
        assert loss_time_bound(d, tau) == pytest.approx(2 * loss_time_bound(b, tau), rel=1e-12)


@pytest.mark.parametrize("tau", [0, 1, 5, 10])
def test_symmetric_degenerate_case_gives_zero_numerator(tau):
    b = BoundInputs(n=1, mu_O=0.44, mu_AB=0.1, mu_H=0.2, mu_C=0.2, rho_C=0.3, rho_NC=0.3, eta_C=0.0)
    tr = tradeoff_bound(b, tau)
    assert tr.numerator == pytest.approx(0.0, abs=1e-15)
    assert tr.ratio == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("tau", [0, 3, 10])
def test_no_criticality_reduces_to_single_series(tau):
    b = BoundInputs(n=10, mu_O=0.44, mu_AB=0.1, mu_H=0.3, mu_C=0.0, rho_C=0.35, rho_NC=0.25, eta_C=0.0)
    expected = b.rho_NC * b.sens_leftover * sum((1 - b.rho_NC) ** k for k in range(tau + 1))
    for form in ("printed", "recursive"):
        assert loss_sens_bound(b, tau, form) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("tau", range(6))
def test_time_bound_truncates_when_every_pair_perishes(tau):
    b = dataclasses.replace(us_preset(n=100), rho_NC=1.0)
    assert loss_time_bound(b, tau) == pytest.approx(b.time_leftover, rel=1e-12)


def test_zero_denominator_raises():
    b = BoundInputs(n=1, mu_O=0.44, mu_AB=0.1, mu_H=0.0, mu_C=0.14, rho_C=0.35, rho_NC=0.25, eta_C=0.09)
    with pytest.raises(ZeroDivisionError):
        tradeoff_bound(b, 10)
    assert bound_series(b, 2)[-1].ratio is None


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        loss_sens_bound(us_preset(), -1)
    with pytest.raises(ValueError):
        loss_time_bound(us_preset(), -1)
    with pytest.raises(ValueError):
        loss_sens_bound(us_preset(), 2, form="other")


def test_series_components_nonnegative_and_consistent():
    for row in bound_series(us_preset(), 15):
        assert min(row.sens_critical_carryover, row.sens_became_critical, row.sens_noncritical, row.time) >= 0
        assert row.sens == pytest.approx(row.sens_critical_carryover + row.sens_became_critical + row.sens_noncritical)
        assert row.numerator == pytest.approx(row.sens - row.time)


# worst case for SENS: every arrival is an O-AB highly-sensitized pair, which no
# other pair in the pool can serve, so nothing is ever matched
WORST_PER_STEP = 20


def worst_case_arrivals(p, t, rng, first_id=0):
    crit = rng.random(WORST_PER_STEP) < p.mu_C
    return [
        PairRecord(first_id + i, BloodType.O, BloodType.AB, p.gamma_H, True, bool(c), t)
        for i, c in enumerate(crit)
    ]


def test_simulated_worst_case_loss_within_bound():
    p = US_2017.replace(crossmatch_noise=False)
    b = BoundInputs(n=WORST_PER_STEP, mu_O=1.0, mu_AB=1.0, mu_H=1.0, mu_C=p.mu_C,
                    rho_C=p.rho_C, rho_NC=p.rho_NC, eta_C=p.eta_C)
    reps = 300
    loss = np.array([[s.expected_loss for s in run(p, "sens", 10, seed, arrivals_fn=worst_case_arrivals).steps]
                     for seed in range(reps)])
    assert loss.shape == (reps, 11)
    mean = loss.mean(axis=0)
    se = loss.std(axis=0, ddof=1) / math.sqrt(reps)
    for tau in range(11):
        for form in ("printed", "recursive"):
            assert mean[tau] <= loss_sens_bound(b, tau, form) + 3 * se[tau], (tau, form)
