"""Pair, pool and compatibility-graph data model."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .rng import Streams


class BloodType(enum.Enum):
    O = "O"
    A = "A"
    B = "B"
    AB = "AB"

    @property
    def antigens(self) -> frozenset[str]:
        return _ANTIGENS[self]

    def __str__(self) -> str:
        return self.value


_ANTIGENS = {
    BloodType.O: frozenset(),
    BloodType.A: frozenset("A"),
    BloodType.B: frozenset("B"),
    BloodType.AB: frozenset("AB"),
}

BLOOD_TYPES = (BloodType.O, BloodType.A, BloodType.B, BloodType.AB)


def abo_compatible(patient: BloodType, donor: BloodType) -> bool:
    """True when a patient of type ``patient`` can receive a kidney from ``donor``."""
    return _ABO[patient, donor]


_ABO = {(p, d): d.antigens <= p.antigens for p in BLOOD_TYPES for d in BLOOD_TYPES}


class PairClass(enum.Enum):
    OVERDEMANDED = "O"
    UNDERDEMANDED = "U"
    SELF_DEMANDED = "S"
    RECIPROCAL = "R"


def classify_pair(patient: BloodType, donor: BloodType) -> PairClass:
    """Blood-type class of a patient-donor pair.

    Overdemanded pairs offer a donor at least as valuable as the one they seek,
    underdemanded pairs the reverse; A-B and B-A are reciprocal.
    """
    if patient == donor:
        return PairClass.SELF_DEMANDED
    if abo_compatible(patient, donor):
        return PairClass.OVERDEMANDED
    if abo_compatible(donor, patient):
        return PairClass.UNDERDEMANDED
    return PairClass.RECIPROCAL


class ParamError(ValueError):
    """Structurally invalid model parameters."""


@dataclass(frozen=True)
class ModelParams:
    n: float
    mu_blood: Mapping[BloodType, float]
    mu_H: float
    mu_C: float
    gamma_H: float
    gamma_L: float
    sigma: float
    rho_C: float
    rho_NC: float
    eta_C: float
    k_max: int = 3
    # "poisson" or "fixed" (exactly round(n) arrivals per step)
    arrivals: str = "poisson"
    # When False, inter-pair edges follow ABO compatibility alone.  Pool entry of
    # self-compatible pairs still uses each pair's own crossmatch.
    crossmatch_noise: bool = True

    def __post_init__(self):
        mu = {BloodType(k) if not isinstance(k, BloodType) else k: float(v) for k, v in self.mu_blood.items()}
        object.__setattr__(self, "mu_blood", {bt: mu.get(bt, 0.0) for bt in BLOOD_TYPES})
        self._check()

    def _check(self):
        if not self.n > 0:
            raise ParamError(f"n must be positive, got {self.n}")
        probs = dict(
            mu_H=self.mu_H, mu_C=self.mu_C, gamma_H=self.gamma_H, gamma_L=self.gamma_L,
            sigma=self.sigma, rho_C=self.rho_C, rho_NC=self.rho_NC, eta_C=self.eta_C,
        )
        probs.update({f"mu_{bt}": v for bt, v in self.mu_blood.items()})
        for name, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ParamError(f"{name} must lie in [0, 1], got {v}")
        total = sum(self.mu_blood.values())
        if abs(total - 1.0) > 1e-9:
            raise ParamError(f"blood-type frequencies sum to {total}, not 1")
        if self.k_max != 3:
            raise ParamError(f"k_max is fixed to 3, got {self.k_max}")
        if self.arrivals not in ("poisson", "fixed"):
            raise ParamError(f"arrivals must be 'poisson' or 'fixed', got {self.arrivals!r}")

    @property
    def gamma_bar(self) -> float:
        return self.mu_H * self.gamma_H + (1.0 - self.mu_H) * self.gamma_L

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ParamReport:
    gamma_bar: float
    checks: tuple[AssumptionCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)


def validate_params(p: ModelParams) -> ParamReport:
    """Check the modelling assumptions the loss bounds rely on.

    Structural problems raise :class:`ParamError` when ``p`` is built; this only
    reports whether the bound assumptions hold.  A simulation may still run when
    they fail.
    """
    gb = p.gamma_bar
    checks = [
        AssumptionCheck(
            "average-sensitization",
            p.mu_H < gb < 0.5,
            f"mu_H={p.mu_H:g} < gamma_bar={gb:g} < 0.5",
        ),
        AssumptionCheck(
            "blood-type-frequency",
            p.mu_blood[BloodType.O] < 1.5 * p.mu_blood[BloodType.A],
            f"mu_O={p.mu_blood[BloodType.O]:g} < 1.5*mu_A={1.5 * p.mu_blood[BloodType.A]:g}",
        ),
        AssumptionCheck(
            "perish-rate-order",
            p.rho_C > p.rho_NC,
            f"rho_C={p.rho_C:g} > rho_NC={p.rho_NC:g}",
        ),
    ]
    return ParamReport(gb, tuple(checks))


class Status(enum.Enum):
    ACTIVE = "active"
    MATCHED = "matched"
    PERISHED = "perished"


@dataclass(frozen=True)
class PairRecord:
    id: int
    patient_blood: BloodType
    donor_blood: BloodType
    sensitization: float
    highly_sensitized: bool
    critical: bool
    arrival_time: int
    status: Status = Status.ACTIVE
    status_time: int | None = None

    @property
    def pair_class(self) -> PairClass:
        return classify_pair(self.patient_blood, self.donor_blood)

    def matched(self, t: int) -> "PairRecord":
        return self._leave(Status.MATCHED, t)

    def perished(self, t: int) -> "PairRecord":
        return self._leave(Status.PERISHED, t)

    def _leave(self, status: Status, t: int) -> "PairRecord":
        if self.status is not Status.ACTIVE:
            raise ValueError(f"pair {self.id} already left the pool ({self.status.value})")
        if t < self.arrival_time:
            raise ValueError(f"pair {self.id} cannot leave at {t} before arriving at {self.arrival_time}")
        return dataclasses.replace(self, status=status, status_time=t)

    def made_critical(self) -> "PairRecord":
        return dataclasses.replace(self, critical=True)


@dataclass
class PoolState:
    """Active pairs at time ``t`` plus the log of pairs that left."""

    t: int = 0
    pairs: dict[int, PairRecord] = field(default_factory=dict)
    history: list[PairRecord] = field(default_factory=list)
    next_id: int = 0
    n_arrived: int = 0
    # uniform crossmatch draws keyed by (donor pair id, patient pair id)
    crossmatch: dict[tuple[int, int], float] = field(default_factory=dict)

    def copy(self) -> "PoolState":
        return PoolState(self.t, dict(self.pairs), list(self.history), self.next_id,
                         self.n_arrived, dict(self.crossmatch))

    def add(self, records: Iterable[PairRecord]) -> None:
        for r in records:
            if r.id in self.pairs:
                raise ValueError(f"duplicate active pair id {r.id}")
            self.pairs[r.id] = r
            self.n_arrived += 1
            self.next_id = max(self.next_id, r.id + 1)

    def remove(self, ids: Iterable[int], status: Status, t: int) -> None:
        for i in ids:
            r = self.pairs.pop(i)
            self.history.append(r.matched(t) if status is Status.MATCHED else r.perished(t))
        self._prune_crossmatch()

    def _prune_crossmatch(self) -> None:
        if self.crossmatch:
            live = self.pairs
            self.crossmatch = {k: u for k, u in self.crossmatch.items() if k[0] in live and k[1] in live}

    @property
    def n_matched(self) -> int:
        return sum(r.status is Status.MATCHED for r in self.history)

    @property
    def n_perished(self) -> int:
        return sum(r.status is Status.PERISHED for r in self.history)

    def ids(self) -> list[int]:
        return sorted(self.pairs)

    def highly_sensitized(self) -> frozenset[int]:
        return frozenset(i for i, r in self.pairs.items() if r.highly_sensitized)

    def critical(self) -> frozenset[int]:
        return frozenset(i for i, r in self.pairs.items() if r.critical)


def generate_arrivals(p: ModelParams, t: int, rng: np.random.Generator, first_id: int = 0) -> list[PairRecord]:
    """Draw the pairs entering the pool at step ``t``.

    Each candidate draws patient and donor blood types independently, a
    sensitization level and a criticality flag.  A candidate whose donor is
    ABO-compatible with its own patient only enters when its own crossmatch
    fails; otherwise it would transplant directly and never join the exchange.
    """
    if p.arrivals == "fixed":
        count = int(round(p.n))
    else:
        count = int(rng.poisson(p.n))
    probs = np.array([p.mu_blood[bt] for bt in BLOOD_TYPES])
    patient = rng.choice(4, size=count, p=probs)
    donor = rng.choice(4, size=count, p=probs)
    high = rng.random(count) < p.mu_H
    crit = rng.random(count) < p.mu_C
    own_xm = rng.random(count)

    out = []
    next_id = first_id
    for i in range(count):
        pb, db = BLOOD_TYPES[patient[i]], BLOOD_TYPES[donor[i]]
        level = p.gamma_H if high[i] else p.gamma_L
        if abo_compatible(pb, db) and not own_xm[i] < level:
            continue
        out.append(PairRecord(
            id=next_id,
            patient_blood=pb,
            donor_blood=db,
            sensitization=level,
            highly_sensitized=bool(high[i]),
            critical=bool(crit[i]),
            arrival_time=t,
        ))
        next_id += 1
    return out


@dataclass(frozen=True)
class CompatGraph:
    """Directed compatibility graph; an edge w -> v means w's donor can give to v's patient."""

    vertices: tuple[int, ...]
    succ: Mapping[int, frozenset[int]]
    # True when edges are exactly the ABO relation between the pairs' blood types
    abo_exact: bool = False

    @classmethod
    def from_edges(cls, vertices: Iterable[int], edges: Iterable[tuple[int, int]], abo_exact: bool = False):
        verts = tuple(sorted(set(vertices)))
        out: dict[int, set[int]] = {v: set() for v in verts}
        for w, v in edges:
            if w == v:
                raise ValueError(f"self-loop on vertex {w}")
            if w not in out or v not in out:
                raise ValueError(f"edge ({w}, {v}) has an endpoint outside the graph")
            out[w].add(v)
        return cls(verts, {v: frozenset(s) for v, s in out.items()}, abo_exact)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(w, v) for w in self.vertices for v in sorted(self.succ[w])]

    def has_edge(self, w: int, v: int) -> bool:
        return v in self.succ.get(w, ())

    def induced(self, keep: Iterable[int]) -> "CompatGraph":
        keep = set(keep) & set(self.vertices)
        verts = tuple(v for v in self.vertices if v in keep)
        return CompatGraph(verts, {v: self.succ[v] & keep for v in verts}, self.abo_exact)


def build_graph(pool: PoolState, rng: Streams, crossmatch_noise: bool = True) -> CompatGraph:
    """Compatibility graph over the active pairs of ``pool``.

    An edge w -> v needs ABO compatibility of w's donor with v's patient and a
    successful tissue crossmatch, which happens with probability
    ``1 - v.sensitization``.  The crossmatch draw for each donor-patient pairing
    is made once and cached on the pool, so repeated calls agree.
    """
    ids = pool.ids()
    recs = [pool.pairs[i] for i in ids]
    by_patient: dict[BloodType, list[PairRecord]] = {bt: [] for bt in BLOOD_TYPES}
    for r in recs:
        by_patient[r.patient_blood].append(r)
    cache = pool.crossmatch
    succ: dict[int, frozenset[int]] = {}
    for w in recs:
        targets = []
        candidates = [v for bt in BLOOD_TYPES if _ABO[bt, w.donor_blood] for v in by_patient[bt]]
        for v in candidates:
            if v.id == w.id:
                continue
            if crossmatch_noise:
                key = (w.id, v.id)
                u = cache.get(key)
                if u is None:
                    u = cache[key] = rng.crossmatch(w.id, v.id)
                if u < v.sensitization:
                    continue
            targets.append(v.id)
        succ[w.id] = frozenset(targets)
    exact = not crossmatch_noise or all(r.sensitization == 0.0 for r in recs)
    return CompatGraph(tuple(ids), succ, abo_exact=exact)
