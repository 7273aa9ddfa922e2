"""Closed-form upper bounds on per-step loss for SENS and TIME on dense pools.

Both bounds count the O-AB pairs a fairness-first clearing leaves behind and
follow them forward in time as they perish or turn critical.  Everything is
linear in ``n``; with ``n = 1`` the values are coefficients of ``n``.

Two evaluations of the SENS bound are offered:

``"printed"``
    the general-horizon expression exactly as published, whose became-critical
    double sum runs over ``k = 0..tau`` with weight ``(1 - rho_C)**(tau - k)``.
    It applies for ``tau > 0``; at ``tau = 0`` the one-step expression (no
    became-critical term) is used.  This is the form behind the published
    tradeoff numerator.
``"recursive"``
    the same accounting carried forward step by step: pairs turning critical
    at step ``k`` first count at ``k + 1``, so the double sum runs over
    ``k = 0..tau-1`` with weight ``(1 - rho_C)**(tau - 1 - k)``.  It agrees with
    the explicit one- and two-step expansions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import BloodType, ModelParams

FORMS = ("printed", "recursive")

# published tau = 10 estimate for the U.S. constants, as coefficients of n
PUBLISHED = {"tau": 10, "numerator": 0.010496, "denominator": 0.114249, "ratio": 0.091872}


@dataclass(frozen=True)
class BoundInputs:
    n: float
    mu_O: float
    mu_AB: float
    mu_H: float
    mu_C: float
    rho_C: float
    rho_NC: float
    eta_C: float

    @property
    def sens_leftover(self) -> float:
        """Expected O-AB highly-sensitized arrivals per step, n*mu_O*mu_AB*mu_H."""
        return self.n * self.mu_O * self.mu_AB * self.mu_H

    @property
    def time_leftover(self) -> float:
        """Expected O-AB critical arrivals per step, n*mu_O*mu_AB*mu_C."""
        return self.n * self.mu_O * self.mu_AB * self.mu_C

    @classmethod
    def from_params(cls, p: ModelParams, n: float | None = None) -> "BoundInputs":
        return cls(
            n=p.n if n is None else n,
            mu_O=p.mu_blood[BloodType.O],
            mu_AB=p.mu_blood[BloodType.AB],
            mu_H=p.mu_H,
            mu_C=p.mu_C,
            rho_C=p.rho_C,
            rho_NC=p.rho_NC,
            eta_C=p.eta_C,
        )

    def scaled(self, n: float) -> "BoundInputs":
        return BoundInputs(n, self.mu_O, self.mu_AB, self.mu_H, self.mu_C, self.rho_C, self.rho_NC, self.eta_C)


def us_preset(n: float = 1.0) -> BoundInputs:
    """U.S. constants; ``n = 1`` gives bounds as coefficients of n."""
    return BoundInputs(n=n, mu_O=0.44, mu_AB=0.10, mu_H=0.3, mu_C=0.14, rho_C=0.35, rho_NC=0.25, eta_C=0.09)


def geometric_sum(q: float, tau: int) -> float:
    """sum_{k=0}^{tau} q**k by direct summation."""
    return math.fsum(q**k for k in range(tau + 1))


def geometric_closed(rho: float, tau: int) -> float:
    """Closed form of sum_{k=0}^{tau} (1 - rho)**k."""
    if rho == 0:
        return float(tau + 1)
    return (1.0 - (1.0 - rho) ** (tau + 1)) / rho


def _survival_sum(rho: float, tau: int) -> float:
    direct = geometric_sum(1.0 - rho, tau)
    closed = geometric_closed(rho, tau)
    if not math.isclose(direct, closed, rel_tol=1e-9, abs_tol=1e-12):
        raise ArithmeticError(f"geometric sum mismatch: {direct} vs {closed} (rho={rho}, tau={tau})")
    return direct


@dataclass(frozen=True)
class SensTerms:
    """SENS loss bound split by where the lost pairs come from."""

    critical_carryover: float
    became_critical: float
    noncritical: float

    @property
    def total(self) -> float:
        return self.critical_carryover + self.became_critical + self.noncritical


def sens_terms(b: BoundInputs, tau: int, form: str = "printed") -> SensTerms:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")
    h = b.sens_leftover
    crit_arrivals = b.mu_C * h
    noncrit_arrivals = (1.0 - b.mu_C) * h

    carry = b.rho_C * crit_arrivals * _survival_sum(b.rho_C, tau)
    noncrit = b.rho_NC * noncrit_arrivals * _survival_sum(b.rho_NC, tau)
    if tau == 0:
        return SensTerms(b.rho_C * crit_arrivals, 0.0, b.rho_NC * noncrit_arrivals)

    if form == "printed":
        ks, lag = range(tau + 1), 0
    else:
        ks, lag = range(tau), 1
    nested = math.fsum(
        math.fsum(noncrit_arrivals * (1.0 - b.rho_NC) ** j for j in range(k + 1)) * (1.0 - b.rho_C) ** (tau - lag - k)
        for k in ks
    )
    return SensTerms(carry, b.rho_C * b.eta_C * nested, noncrit)


def loss_sens_bound(b: BoundInputs, tau: int, form: str = "printed") -> float:
    return sens_terms(b, tau, form).total


def loss_time_bound(b: BoundInputs, tau: int) -> float:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return b.rho_NC * math.fsum(b.time_leftover * (1.0 - b.rho_NC) ** k for k in range(tau + 1))


@dataclass(frozen=True)
class TradeoffBound:
    numerator: float
    denominator: float

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator


def tradeoff_bound(b: BoundInputs, tau: int, form: str = "printed") -> TradeoffBound:
    sens = loss_sens_bound(b, tau, form)
    if sens <= 0:
        raise ZeroDivisionError(f"SENS loss bound is {sens} at tau={tau}; tradeoff undefined")
    return TradeoffBound(sens - loss_time_bound(b, tau), sens)


@dataclass(frozen=True)
class BoundRow:
    tau: int
    sens: float
    sens_critical_carryover: float
    sens_became_critical: float
    sens_noncritical: float
    time: float
    numerator: float
    denominator: float
    ratio: float | None


BOUND_COLUMNS = ("tau", "sens", "sens_critical_carryover", "sens_became_critical", "sens_noncritical",
                 "time", "numerator", "denominator", "ratio")


def bound_series(b: BoundInputs, tau_max: int, form: str = "printed") -> list[BoundRow]:
    rows = []
    for tau in range(tau_max + 1):
        terms = sens_terms(b, tau, form)
        sens = terms.total
        time = loss_time_bound(b, tau)
        rows.append(BoundRow(
            tau, sens, terms.critical_carryover, terms.became_critical, terms.noncritical, time,
            sens - time, sens, (sens - time) / sens if sens > 0 else None,
        ))
    return rows


@dataclass(frozen=True)
class PublishedComparison:
    quantity: str
    computed: float
    published: float

    @property
    def rel_diff(self) -> float:
        return (self.computed - self.published) / self.published

    def agrees(self, rel_tol: float = 0.01) -> bool:
        return abs(self.rel_diff) <= rel_tol


def compare_published(b: BoundInputs | None = None, form: str = "printed") -> list[PublishedComparison]:
    """Computed vs. published tau = 10 tradeoff figures, in coefficient-of-n form."""
    b = (b or us_preset()).scaled(1.0)
    tr = tradeoff_bound(b, PUBLISHED["tau"], form)
    return [
        PublishedComparison("numerator", tr.numerator, PUBLISHED["numerator"]),
        PublishedComparison("denominator", tr.denominator, PUBLISHED["denominator"]),
        PublishedComparison("ratio", tr.ratio, PUBLISHED["ratio"]),
    ]
