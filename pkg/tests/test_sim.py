import math
import random

import numpy as np
import pytest
from scipy import stats

from kidneyfair.config import US_2017
from kidneyfair.model import BloodType, PairRecord, PoolState, Status, generate_arrivals
from kidneyfair.report import STEP_COLUMNS, STEP_SCHEMA, steps_csv, tradeoff_csv
from kidneyfair.rng import Streams, replication_seed
from kidneyfair.sim import _mean_ci, estimate_tradeoff, resolve_policy, run, step
from kidneyfair.solver import Objective, matched_counts, solve

from .oracles import random_instance


def no_arrivals(p, t, rng, first_id=0):
    return []


def test_no_perishing_means_no_loss_and_pool_grows():
    p = US_2017.replace(n=20, rho_C=0.0, rho_NC=0.0, eta_C=0.0)
    rep = run(p, "sens", 6, seed=1)
    size = 0
    for s in rep.steps:
        assert s.realized_loss == 0 and s.expected_loss == 0
        assert s.pool_size == size + s.arrivals - s.matched_total
        size = s.pool_size


def test_certain_perishing_empties_pool_each_step():
    p = US_2017.replace(n=20, rho_C=1.0, rho_NC=1.0)
    rep = run(p, "time", 6, seed=2)
    for s in rep.steps:
        assert s.pool_size == 0
        assert s.realized_loss == s.arrivals - s.matched_total
    assert not rep.final_pool.pairs


def test_single_critical_pair_perishes_at_its_rate():
    p = US_2017.replace(rho_C=0.35)
    pool = PoolState()
    pool.add([PairRecord(0, BloodType.O, BloodType.AB, 0.9, True, True, 0)])
    reps = 100_000
    dead = 0
    for seed in range(reps):
        _, rep = step(pool, p, "sens", Streams(seed), arrivals_fn=no_arrivals)
        assert rep.expected_loss == 0.35
        dead += rep.perished_critical
    se = math.sqrt(0.35 * 0.65 / reps)
    assert abs(dead / reps - 0.35) < 3 * se


def test_tau_zero_is_the_static_problem():
    p = US_2017.replace(n=40)
    rep = run(p, "maxcard", 0, seed=3)
    assert len(rep.steps) == 1
    pool = PoolState()
    pool.add(generate_arrivals(p, 0, Streams(3).arrivals(0)))
    assert rep.steps[0].arrivals == len(pool.pairs)


@pytest.mark.parametrize("policy", ["maxcard", "sens", "time", "batched"])
def test_runs_are_deterministic(policy):
    p = US_2017.replace(n=30)
    a, b = run(p, policy, 5, seed=11), run(p, policy, 5, seed=11)
    assert a.steps == b.steps
    assert steps_csv(a, p) == steps_csv(b, p)


@pytest.mark.parametrize("seed", range(5))
def test_conservation(seed):
    rep = run(US_2017.replace(n=40), "batched", 8, seed)
    pool = rep.final_pool
    assert rep.arrivals == pool.n_matched + pool.n_perished + len(pool.pairs)
    assert rep.matched == pool.n_matched
    assert rep.realized_loss == pool.n_perished


def test_criticality_never_reverts():
    seen: dict[int, bool] = {}

    def watching(g, pool):
        for i, r in pool.pairs.items():
            if seen.get(i):
                assert r.critical
            seen[i] = r.critical
        return solve(g, pool, Objective.sens())

    run(US_2017.replace(n=40, eta_C=0.4), watching, 10, seed=4)
    assert any(seen.values())


def test_arms_share_arrivals_and_crossmatches():
    p = US_2017.replace(n=40)
    log = {}

    def recorder(arm):
        def fn(p, t, rng, first_id=0):
            out = generate_arrivals(p, t, rng, first_id)
            log.setdefault(arm, []).append([(r.patient_blood, r.donor_blood, r.sensitization, r.critical)
                                            for r in out])
            return out
        return fn

    seed = replication_seed(5, 0)
    a = run(p, "sens", 8, seed, arrivals_fn=recorder("sens"))
    b = run(p, "time", 8, seed, arrivals_fn=recorder("time"))
    assert log["sens"] == log["time"]
    assert [s.arrivals for s in a.steps] == [s.arrivals for s in b.steps]
    # crossmatch outcomes are keyed by (donor, patient) ids, not by draw order
    s1, s2 = Streams(seed), Streams(seed)
    pairs = [(3, 9), (9, 3), (0, 1)]
    assert [s1.crossmatch(*x) for x in pairs] == [s2.crossmatch(*x) for x in reversed(pairs)][::-1]


def test_replication_seeds_are_prefix_stable():
    assert [replication_seed(7, r) for r in range(5)] == [replication_seed(7, r) for r in range(10)][:5]
    assert len({replication_seed(7, r) for r in range(100)}) == 100


def test_identical_arms_give_zero_tradeoff():
    est = estimate_tradeoff(US_2017.replace(n=30), 4, 6, seed=1, arms=("time", "time"))
    assert all(a == b for a, b in est.losses)
    assert est.mean == 0.0 and est.diff_mean == 0.0


def test_single_replication_has_no_interval():
    est = estimate_tradeoff(US_2017.replace(n=30), 3, 1, seed=2)
    assert est.ci is None and est.diff_ci is None
    with pytest.raises(ValueError):
        estimate_tradeoff(US_2017, 3, 0, seed=2)


def test_equal_perish_rates_give_finite_estimate():
    est = estimate_tradeoff(US_2017.replace(n=40, rho_C=0.3, rho_NC=0.3), 4, 10, seed=3)
    assert math.isfinite(est.mean) and est.ci is not None


def test_zero_loss_replications_are_excluded():
    est = estimate_tradeoff(US_2017.replace(n=10, rho_C=0.0, rho_NC=0.0), 2, 4, seed=0)
    assert est.excluded == 4 and math.isnan(est.mean)
    assert math.isnan(est.ratio_of_means)


def test_ci_width_scales_with_inverse_root_r():
    p = US_2017.replace(n=100, gamma_H=0.0, gamma_L=0.0)
    est = estimate_tradeoff(p, 5, 400, seed=0)
    a = np.array(est.losses, dtype=float)
    ratios = (a[:, 0] - a[:, 1]) / a[:, 0]

    def width(x):
        lo, hi = _mean_ci(x)[2]
        return hi - lo

    # replications are prefix-stable, so the first 100 are exactly an R=100 run
    observed = width(ratios[:100]) / width(ratios)
    predicted = (stats.t.ppf(0.975, 99) / math.sqrt(100)) / (stats.t.ppf(0.975, 399) / math.sqrt(400))
    assert abs(observed / predicted - 1) < 0.2


def test_parallel_matches_serial():
    p = US_2017.replace(n=20)
    assert estimate_tradeoff(p, 3, 4, seed=9, threads=2) == estimate_tradeoff(p, 3, 4, seed=9, threads=1)


def test_sens_maximizes_sensitized_on_every_small_graph():
    rng = random.Random(21)
    others = [resolve_policy(x) for x in ("maxcard", "time", "batched")]
    for _ in range(300):
        pool, g = random_instance(rng)
        best = matched_counts(solve(g, pool, Objective.sens()), pool).sensitized
        for pol in others:
            assert best >= matched_counts(pol(g, pool), pool).sensitized


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        resolve_policy("nosuch")
    with pytest.raises(ValueError):
        run(US_2017, "sens", -1, seed=0)


def test_step_csv_schema():
    p = US_2017.replace(n=15)
    rep = run(p, "sens", 3, seed=6)
    lines = steps_csv(rep, p).splitlines()
    assert lines[0] == f"# schema: {STEP_SCHEMA}"
    body = [l for l in lines if not l.startswith("#")]
    assert body[0].split(",") == list(STEP_COLUMNS)
    assert len(body) == 1 + 4
    last = dict(zip(STEP_COLUMNS, body[-1].split(",")))
    assert int(last["cum_realized_loss"]) == rep.realized_loss
    assert float(last["cum_expected_loss"]) == pytest.approx(rep.expected_loss)


def test_tradeoff_csv_rows():
    p = US_2017.replace(n=15)
    est = estimate_tradeoff(p, 2, 3, seed=1)
    body = [l for l in tradeoff_csv(est, p).splitlines() if not l.startswith("#")]
    assert body[0] == "replication,loss_sens,loss_time,difference,ratio,excluded"
    assert len(body) == 4


def test_warm_start_pool_is_not_mutated():
    p = US_2017.replace(n=10)
    pool = PoolState()
    pool.add(generate_arrivals(p.replace(n=30), 0, np.random.default_rng(0)))
    before = dict(pool.pairs)
    rep = run(p, "sens", 2, seed=0, pool=pool)
    assert pool.pairs == before
    assert all(r.status is Status.ACTIVE for r in rep.final_pool.pairs.values())
