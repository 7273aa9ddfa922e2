"""Discrete-time pool dynamics and Monte Carlo estimation of the loss tradeoff."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .model import CompatGraph, ModelParams, PoolState, Status, build_graph, generate_arrivals
from .rng import Streams, replication_seed
from .solver import Matching, Objective, matched_counts, solve, solve_batched

Policy = Union[str, Callable[[CompatGraph, PoolState], Matching]]

POLICIES = ("maxcard", "sens", "time", "batched")


def resolve_policy(policy: Policy) -> Callable[[CompatGraph, PoolState], Matching]:
    if callable(policy):
        return policy
    if policy == "batched":
        return solve_batched
    objectives = {
        "maxcard": Objective.max_cardinality(),
        "sens": Objective.sens(),
        "time": Objective.time(),
    }
    try:
        obj = objectives[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}") from None
    return lambda g, pool: solve(g, pool, obj)


def policy_label(policy: Policy) -> str:
    return policy if isinstance(policy, str) else getattr(policy, "__name__", "custom")


@dataclass(frozen=True)
class StepReport:
    t: int
    arrivals: int
    matched_total: int
    matched_sensitized: int
    matched_critical: int
    unmatched_critical: int
    unmatched_noncritical: int
    expected_loss: float
    perished_critical: int
    perished_noncritical: int
    became_critical: int
    pool_size: int

    @property
    def realized_loss(self) -> int:
        return self.perished_critical + self.perished_noncritical


@dataclass(frozen=True)
class RunReport:
    steps: tuple[StepReport, ...]
    tau: int
    policy: str
    seed: int
    final_pool: PoolState

    @property
    def realized_loss(self) -> int:
        """Cumulative realized loss through the horizon."""
        return sum(s.realized_loss for s in self.steps)

    @property
    def expected_loss(self) -> float:
        return math.fsum(s.expected_loss for s in self.steps)

    @property
    def arrivals(self) -> int:
        return sum(s.arrivals for s in self.steps)

    @property
    def matched(self) -> int:
        return sum(s.matched_total for s in self.steps)


ArrivalFn = Callable[..., list]


def step(pool: PoolState, p: ModelParams, policy: Policy, rng: Streams,
         arrivals_fn: ArrivalFn = generate_arrivals) -> tuple[PoolState, StepReport]:
    """Advance the pool by one time step.

    Order of events: arrivals join, the compatibility graph is built, the policy
    clears a matching, every unmatched pair perishes with its perish rate, and
    every surviving non-critical pair may turn critical.  The expected loss is
    taken on the pool right after matching, before any pair perishes.
    """
    t = pool.t
    new = pool.copy()
    arrivals = arrivals_fn(p, t, rng.arrivals(t), first_id=new.next_id)
    new.add(arrivals)

    g = build_graph(new, rng, p.crossmatch_noise)
    m = resolve_policy(policy)(g, new)
    counts = matched_counts(m, new)
    new.remove(sorted(m.matched), Status.MATCHED, t)

    crit = [r for r in new.pairs.values() if r.critical]
    noncrit = [r for r in new.pairs.values() if not r.critical]
    expected = p.rho_C * len(crit) + p.rho_NC * len(noncrit)
    dead_c = [r.id for r in crit if rng.perish(t, r.id) < p.rho_C]
    dead_nc = [r.id for r in noncrit if rng.perish(t, r.id) < p.rho_NC]
    new.remove(sorted(dead_c + dead_nc), Status.PERISHED, t)

    became = 0
    for i in sorted(new.pairs):
        r = new.pairs[i]
        if not r.critical and rng.become_critical(t, i) < p.eta_C:
            new.pairs[i] = r.made_critical()
            became += 1

    new.t = t + 1
    report = StepReport(
        t=t,
        arrivals=len(arrivals),
        matched_total=counts.total,
        matched_sensitized=counts.sensitized,
        matched_critical=counts.critical,
        unmatched_critical=len(crit),
        unmatched_noncritical=len(noncrit),
        expected_loss=expected,
        perished_critical=len(dead_c),
        perished_noncritical=len(dead_nc),
        became_critical=became,
        pool_size=len(new.pairs),
    )
    return new, report


def run(p: ModelParams, policy: Policy, tau: int, seed: int, pool: PoolState | None = None,
        arrivals_fn: ArrivalFn = generate_arrivals) -> RunReport:
    """Simulate steps 0..tau starting from ``pool`` (empty by default).

    ``arrivals_fn`` has the signature of :func:`generate_arrivals` and can
    replace the default arrival process.
    """
    if tau < 0:
        raise ValueError(f"horizon must be non-negative, got {tau}")
    rng = Streams(seed)
    state = pool.copy() if pool is not None else PoolState()
    reports = []
    for _ in range(tau + 1):
        state, rep = step(state, p, policy, rng, arrivals_fn)
        reports.append(rep)
    return RunReport(tuple(reports), tau, policy_label(policy), seed, state)


@dataclass(frozen=True)
class TradeoffEstimate:
    """Paired-seed estimate of (L(SENS) - L(TIME)) / L(SENS) at a finite horizon.

    Losses are cumulative realized perish counts through the horizon.
    Replications with zero loss on the first arm are excluded from the ratio.
    """

    tau: int
    replications: int
    seed: int
    losses: tuple[tuple[int, int], ...]
    excluded: int
    mean: float
    se: float
    ci: tuple[float, float] | None
    ratio_of_means: float
    diff_mean: float
    diff_se: float
    diff_ci: tuple[float, float] | None
    arms: tuple[str, str] = ("sens", "time")

    @property
    def used(self) -> int:
        return self.replications - self.excluded


def _mean_ci(x: np.ndarray, level: float = 0.95):
    k = len(x)
    if k == 0:
        return math.nan, math.nan, None
    mean = float(np.mean(x))
    if k < 2:
        return mean, math.nan, None
    from scipy import stats

    se = float(np.std(x, ddof=1) / math.sqrt(k))
    half = float(stats.t.ppf(0.5 + level / 2, k - 1)) * se
    return mean, se, (mean - half, mean + half)


def _paired_losses(args) -> tuple[int, int]:
    p, tau, sub, arms = args
    return tuple(run(p, arm, tau, sub).realized_loss for arm in arms)


def estimate_tradeoff(p: ModelParams, tau: int, R: int, seed: int,
                      arms: Sequence[Policy] = ("sens", "time"), threads: int | None = 1) -> TradeoffEstimate:
    """Run ``R`` paired replications of both arms and summarize the loss ratio.

    Replication ``r`` runs both arms from the sub-seed ``replication_seed(seed, r)``,
    so they see identical arrivals, crossmatches and perish draws for shared pairs.
    """
    if R < 1:
        raise ValueError(f"need at least one replication, got {R}")
    arms = tuple(arms)
    jobs = [(p, tau, replication_seed(seed, r), arms) for r in range(R)]
    workers = threads or os.cpu_count() or 1
    if workers > 1 and R > 1 and all(isinstance(a, str) for a in arms):
        with ProcessPoolExecutor(max_workers=workers) as ex:
            losses = list(ex.map(_paired_losses, jobs, chunksize=max(1, R // (4 * workers))))
    else:
        losses = [_paired_losses(j) for j in jobs]

    a = np.array([l[0] for l in losses], dtype=float)
    b = np.array([l[1] for l in losses], dtype=float)
    ok = a > 0
    ratios = (a[ok] - b[ok]) / a[ok]
    mean, se, ci = _mean_ci(ratios)
    dmean, dse, dci = _mean_ci(a - b)
    rom = float((a.sum() - b.sum()) / a.sum()) if a.sum() > 0 else math.nan
    return TradeoffEstimate(
        tau=tau, replications=R, seed=seed, losses=tuple(losses), excluded=int((~ok).sum()),
        mean=mean, se=se, ci=ci, ratio_of_means=rom, diff_mean=dmean, diff_se=dse, diff_ci=dci,
        arms=tuple(policy_label(x) for x in arms),
    )
