"""Cycle enumeration and exact clearing under the fairness objectives.

A matching is a set of vertex-disjoint 2- and 3-cycles.  Every objective used
here is additive over matched vertices, so clearing reduces to a weighted set
packing over the enumerated cycles.  Small components are solved by a
depth-first branch and bound; large ones go to the HiGHS MILP solver through
:func:`scipy.optimize.milp`.  When the graph is exactly the ABO relation,
pairs with equal blood types and labels are interchangeable and the packing is
solved over pair types instead of individual pairs.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .model import BLOOD_TYPES, CompatGraph, PairRecord, PoolState, abo_compatible

Cycle = tuple[int, ...]

# branch-and-bound is used for components with at most this many cycles
BNB_MAX_CYCLES = 300
BNB_NODE_LIMIT = 200_000
# ABO-exact graphs larger than this are solved over pair types
AGGREGATE_MIN_VERTICES = 24


def canonical(cycle: Sequence[int]) -> Cycle:
    """Rotation of ``cycle`` that starts at its smallest element."""
    i = min(range(len(cycle)), key=cycle.__getitem__)
    return tuple(cycle[i:]) + tuple(cycle[:i])


def enumerate_cycles(g: CompatGraph, k_max: int = 3) -> list[Cycle]:
    """All simple directed cycles of length 2..k_max, each once in canonical form."""
    if k_max not in (2, 3):
        raise ValueError(f"k_max must be 2 or 3, got {k_max}")
    out: list[Cycle] = []
    succ = g.succ
    for v in g.vertices:
        higher = sorted(w for w in succ[v] if w > v)
        for a in higher:
            if v in succ[a]:
                out.append((v, a))
        if k_max == 3:
            for a in higher:
                for b in sorted(succ[a]):
                    if b > v and b != a and v in succ[b]:
                        out.append((v, a, b))
    out.sort()
    return out


class Counts(NamedTuple):
    total: int
    sensitized: int
    critical: int


_FEATURES = {
    "total": lambda r: 1,
    "sensitized": lambda r: int(r.highly_sensitized),
    "critical": lambda r: int(r.critical),
}


@dataclass(frozen=True)
class Objective:
    """What a clearing maximizes.

    ``chain`` lists vertex features compared lexicographically; the first one is
    the primary score.  A weighted objective instead scores each matched pair
    with ``weight(record)``.
    """

    name: str
    chain: tuple[str, ...] = ()
    weight: Callable[[PairRecord], float] | None = None

    @classmethod
    def max_cardinality(cls) -> "Objective":
        return cls("maxcard", ("total",))

    @classmethod
    def sens(cls) -> "Objective":
        return cls("sens", ("sensitized", "total", "critical"))

    @classmethod
    def time(cls) -> "Objective":
        return cls("time", ("critical", "total", "sensitized"))

    @classmethod
    def weighted(cls, weight: Callable[[PairRecord], float], name: str = "weighted") -> "Objective":
        return cls(name, (), weight)

    def score(self, counts: Counts) -> tuple[int, ...]:
        return tuple(getattr(counts, f) for f in self.chain)

    def vertex_weights(self, records: Iterable[PairRecord], n: int) -> dict[int, int | float]:
        if self.weight is not None:
            out = {}
            for r in records:
                w = self.weight(r)
                if w < 0:
                    raise ValueError(f"negative weight {w} for pair {r.id}")
                out[r.id] = w
            return out
        base = n + 1
        feats = [_FEATURES[f] for f in self.chain]
        out = {}
        for r in records:
            w = 0
            for f in feats:
                w = w * base + f(r)
            out[r.id] = w
        return out


OBJECTIVES = {
    "maxcard": Objective.max_cardinality,
    "sens": Objective.sens,
    "time": Objective.time,
}


@dataclass(frozen=True)
class Matching:
    """Vertex-disjoint exchange cycles.

    ``stages`` is set by the batched clearing and gives, per cycle, the stage
    (1-4) that selected it.
    """

    cycles: tuple[Cycle, ...] = ()
    stages: tuple[int, ...] | None = None

    @property
    def matched(self) -> frozenset[int]:
        return frozenset(v for c in self.cycles for v in c)

    def __len__(self) -> int:
        return len(self.cycles)

    def check(self, g: CompatGraph, k_max: int = 3) -> None:
        """Raise ``ValueError`` unless this is a legal matching on ``g``."""
        seen: set[int] = set()
        for c in self.cycles:
            if not 2 <= len(c) <= k_max:
                raise ValueError(f"cycle {c} has illegal length")
            if len(set(c)) != len(c):
                raise ValueError(f"cycle {c} repeats a vertex")
            for i, w in enumerate(c):
                v = c[(i + 1) % len(c)]
                if not g.has_edge(w, v):
                    raise ValueError(f"cycle {c} uses missing edge {w}->{v}")
            if seen & set(c):
                raise ValueError(f"cycle {c} overlaps another cycle")
            seen.update(c)


def matched_counts(m: Matching, pool: PoolState) -> Counts:
    total = sens = crit = 0
    for v in m.matched:
        r = pool.pairs[v]
        total += 1
        sens += r.highly_sensitized
        crit += r.critical
    return Counts(total, sens, crit)


def solve(g: CompatGraph, pool: PoolState, obj: Objective) -> Matching:
    """Optimal matching on ``g`` for ``obj``; deterministic given its inputs."""
    weights = obj.vertex_weights((pool.pairs[v] for v in g.vertices), len(g.vertices))
    return Matching(tuple(_clear(g, pool, weights)))


def solve_batched(g: CompatGraph, pool: PoolState) -> Matching:
    """Four-stage clearing that serves critical pairs first, then sensitized ones.

    1. cycles among critical pairs, maximizing critical pairs matched;
    2. cycles among leftover critical and sensitized pairs that contain at least
       one leftover critical pair, maximizing critical then sensitized matched;
    3. cycles among leftover sensitized pairs;
    4. maximum cardinality over everything still unmatched.

    Later stages only see pairs left unmatched by earlier ones.
    """
    crit = {v for v in g.vertices if pool.pairs[v].critical}
    sens = {v for v in g.vertices if pool.pairs[v].highly_sensitized}
    cycles: list[Cycle] = []
    stages: list[int] = []
    used: set[int] = set()

    def run(stage: int, keep: set[int], chain: tuple[str, ...], need: set[int] | None = None):
        sub = g.induced(keep - used)
        if not sub.vertices:
            return
        obj = Objective(f"stage{stage}", chain)
        weights = obj.vertex_weights((pool.pairs[v] for v in sub.vertices), len(sub.vertices))
        accept = None if need is None else (lambda c: any(v in need for v in c))
        found = _clear(sub, pool, weights, accept)
        for c in found:
            cycles.append(c)
            stages.append(stage)
            used.update(c)

    run(1, crit, ("critical", "total", "sensitized"))
    leftover_crit = crit - used
    run(2, leftover_crit | sens, ("critical", "sensitized", "total"), need=leftover_crit)
    run(3, sens, ("sensitized", "total", "critical"))
    run(4, set(g.vertices), ("total",))
    return Matching(tuple(cycles), tuple(stages))


# -- packing machinery ------------------------------------------------------


def _clear(g: CompatGraph, pool: PoolState, weights: dict[int, int | float],
           accept: Callable[[Cycle], bool] | None = None) -> list[Cycle]:
    if g.abo_exact and len(g.vertices) >= AGGREGATE_MIN_VERTICES:
        if accept is None:
            return _clear_by_blood_type(g, pool, weights)
        return _clear_by_type(g, pool, weights, accept)
    cycles = enumerate_cycles(g)
    if accept is not None:
        cycles = [c for c in cycles if accept(c)]
    cycles = [c for c in cycles if sum(weights[v] for v in c) > 0]
    chosen: list[Cycle] = []
    for comp in _components(cycles):
        if len(comp) <= BNB_MAX_CYCLES:
            picked = _branch_and_bound(comp, weights, BNB_NODE_LIMIT)
            if picked is not None:
                chosen.extend(picked)
                continue
        chosen.extend(_milp_cycles(comp, weights))
    return sorted(chosen)


def _components(cycles: list[Cycle]) -> list[list[Cycle]]:
    parent: dict[int, int] = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in cycles:
        for v in c:
            parent.setdefault(v, v)
        r = find(c[0])
        for v in c[1:]:
            rv = find(v)
            if rv != r:
                parent[max(rv, r)] = min(rv, r)
                r = min(rv, r)
    groups: dict[int, list[Cycle]] = defaultdict(list)
    for c in cycles:
        groups[find(c[0])].append(c)
    return [groups[k] for k in sorted(groups)]


def _branch_and_bound(cycles: list[Cycle], weights, node_limit: int) -> list[Cycle] | None:
    """Exact max-weight packing of ``cycles`` or ``None`` if the node budget runs out.

    Branches on the smallest free vertex that still lies on a feasible cycle:
    either one of its cycles is taken or the vertex stays unmatched.  The bound
    is the current value plus the weight of every free vertex that lies on a
    feasible cycle.
    """
    verts = sorted({v for c in cycles for v in c})
    bit = {v: 1 << i for i, v in enumerate(verts)}
    vw = [weights[v] for v in verts]
    masks = [sum(bit[v] for v in c) for c in cycles]
    cw = [sum(weights[v] for v in c) for c in cycles]
    by_vertex: list[list[int]] = [[] for _ in verts]
    index = {v: i for i, v in enumerate(verts)}
    for ci, c in enumerate(cycles):
        for v in c:
            by_vertex[index[v]].append(ci)

    best_val = -1
    best: list[int] = []
    nodes = 0
    chosen: list[int] = []

    def mask_weight(m: int) -> int | float:
        s = 0
        while m:
            low = m & -m
            s += vw[low.bit_length() - 1]
            m ^= low
        return s

    def dfs(blocked: int, value):
        nonlocal best_val, best, nodes
        nodes += 1
        if nodes > node_limit:
            raise _Budget
        reach = 0
        for m in masks:
            if not m & blocked:
                reach |= m
        if value + mask_weight(reach) <= best_val:
            return
        if not reach:
            best_val = value
            best = list(chosen)
            return
        i = (reach & -reach).bit_length() - 1
        for ci in by_vertex[i]:
            m = masks[ci]
            if not m & blocked:
                chosen.append(ci)
                dfs(blocked | m, value + cw[ci])
                chosen.pop()
        dfs(blocked | (1 << i), value)

    try:
        dfs(0, 0)
    except _Budget:
        return None
    return [cycles[ci] for ci in best]


class _Budget(Exception):
    pass


def _integer_program(values, rows: list[dict[int, float]], lo, hi, var_ub) -> list[int]:
    """Maximize ``values @ x`` over non-negative integers with ``lo <= rows @ x <= hi``."""
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import csc_array

    nvar = len(values)
    if nvar == 0:
        return []
    data, ri, ci = [], [], []
    for i, row in enumerate(rows):
        for j, a in row.items():
            data.append(a)
            ri.append(i)
            ci.append(j)
    a = csc_array((data, (ri, ci)), shape=(len(rows), nvar))
    res = milp(
        c=-np.asarray(values, dtype=float),
        constraints=LinearConstraint(a, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)),
        integrality=np.ones(nvar),
        bounds=Bounds(0, np.asarray(var_ub, dtype=float)),
        options={"mip_rel_gap": 0.0, "presolve": True},
    )
    if res.x is None:
        raise RuntimeError(f"MILP solver failed: {res.message}")
    return [int(round(x)) for x in res.x]


def _milp(usage: list[dict[int, int]], values: list[float], capacity: dict[int, int]) -> list[int]:
    """Integer counts maximizing ``sum(values * x)`` subject to unit capacities."""
    if not usage:
        return []
    units = sorted(capacity)
    rows: list[dict[int, float]] = [{} for _ in units]
    row = {u: i for i, u in enumerate(units)}
    for j, use in enumerate(usage):
        for u, k in use.items():
            rows[row[u]][j] = k
    ub = [min(capacity[u] // k for u, k in use.items()) for use in usage]
    return _integer_program(values, rows, [-np.inf] * len(units), [capacity[u] for u in units], ub)


def _milp_cycles(cycles: list[Cycle], weights) -> list[Cycle]:
    usage = [{v: 1 for v in c} for c in cycles]
    values = [float(sum(weights[v] for v in c)) for c in cycles]
    capacity = {v: 1 for c in cycles for v in c}
    x = _milp(usage, values, capacity)
    return [c for c, k in zip(cycles, x) if k]


_BT_INDEX = {bt: i for i, bt in enumerate(BLOOD_TYPES)}


def _blood_patterns(present: list[tuple[int, int]], cap: dict[tuple[int, int], int]) -> list[tuple]:
    """Canonical 2- and 3-cycle patterns over pair blood types (patient, donor)."""
    n = len(present)
    succ = [[b for b in range(n) if abo_compatible(BLOOD_TYPES[present[b][0]], BLOOD_TYPES[present[a][1]])]
            for a in range(n)]
    succ_set = [set(x) for x in succ]
    out = []
    for a in range(n):
        for b in succ[a]:
            if b >= a and a in succ_set[b] and (b != a or cap[present[a]] >= 2):
                out.append((a, b))
        for b in succ[a]:
            if b < a:
                continue
            for c in succ[b]:
                if c < a or a not in succ_set[c]:
                    continue
                pat = (a, b, c)
                if min(pat[1:] + pat[:1], pat[2:] + pat[:2]) < pat:
                    continue
                if any(cap[present[u]] < k for u, k in Counter(pat).items()):
                    continue
                out.append(pat)
    return [tuple(present[u] for u in p) for p in out]


def _clear_by_blood_type(g: CompatGraph, pool: PoolState, weights) -> list[Cycle]:
    """Packing on an ABO-exact graph with no per-cycle restriction.

    Edges depend only on blood types, so the program chooses how many cycles of
    each blood-type pattern to form and, separately, how many pairs of each
    label class fill the slots of each blood type.  Both choices are integral
    and together exactly describe every matching up to relabelling.
    """
    groups: dict[tuple[int, int], dict[object, list[int]]] = defaultdict(lambda: defaultdict(list))
    for v in g.vertices:
        r = pool.pairs[v]
        bt = (_BT_INDEX[r.patient_blood], _BT_INDEX[r.donor_blood])
        groups[bt][(-weights[v], int(r.highly_sensitized), int(r.critical))].append(v)
    present = sorted(groups)
    cap = {bt: sum(len(m) for m in groups[bt].values()) for bt in present}
    patterns = _blood_patterns(present, cap)
    fills = [(bt, key) for bt in present for key in sorted(groups[bt])]

    npat = len(patterns)
    values = [0.0] * npat + [-key[0] for _, key in fills]
    var_ub = [min(cap[bt] // k for bt, k in Counter(p).items()) for p in patterns]
    var_ub += [len(groups[bt][key]) for bt, key in fills]
    rows: list[dict[int, float]] = []
    for bt in present:
        row: dict[int, float] = {}
        for j, p in enumerate(patterns):
            k = p.count(bt)
            if k:
                row[j] = k
        for j, (fbt, _) in enumerate(fills):
            if fbt == bt:
                row[npat + j] = -1
        rows.append(row)
    if not patterns:
        return []
    x = _integer_program(values, rows, [0] * len(rows), [0] * len(rows), var_ub)

    slots: dict[tuple[int, int], list[int]] = {}
    for bt in present:
        chosen = []
        for j, (fbt, key) in enumerate(fills):
            if fbt == bt:
                chosen.extend(groups[bt][key][:x[npat + j]])
        slots[bt] = sorted(chosen, reverse=True)
    out: list[Cycle] = []
    for pat, k in sorted(zip(patterns, x[:npat])):
        for _ in range(k):
            out.append(canonical([slots[bt].pop() for bt in pat]))
    return sorted(out)


def _clear_by_type(g: CompatGraph, pool: PoolState, weights, accept) -> list[Cycle]:
    """Packing over labelled pair types on an ABO-exact graph.

    Vertices sharing blood types, labels and weight are interchangeable; the
    solver picks how many cycles of each type pattern to form and then assigns
    concrete pairs, smallest ids first.
    """
    members: dict[tuple, list[int]] = defaultdict(list)
    for v in g.vertices:
        r = pool.pairs[v]
        key = (_BT_INDEX[r.patient_blood], _BT_INDEX[r.donor_blood],
               int(r.highly_sensitized), int(r.critical), weights[v])
        members[key].append(v)
    keys = sorted(members)
    cap = [len(members[k]) for k in keys]
    rep = [members[k][0] for k in keys]
    n = len(keys)
    succ = [
        [b for b in range(n)
         if abo_compatible(BLOOD_TYPES[keys[b][0]], BLOOD_TYPES[keys[a][1]])]
        for a in range(n)
    ]
    succ_set = [set(s) for s in succ]

    patterns: list[tuple[int, ...]] = []
    for a in range(n):
        for b in succ[a]:
            if b < a or a not in succ_set[b]:
                continue
            if b == a and cap[a] < 2:
                continue
            patterns.append((a, b))
        for b in succ[a]:
            if b < a:
                continue
            for c in succ[b]:
                if c < a or a not in succ_set[c]:
                    continue
                pat = (a, b, c)
                if min(pat[1:] + pat[:1], pat[2:] + pat[:2]) < pat:
                    continue
                mult = Counter(pat)
                if any(cap[u] < k for u, k in mult.items()):
                    continue
                patterns.append(pat)

    if accept is not None:
        patterns = [p for p in patterns if accept(tuple(rep[u] for u in p))]
    values = [float(sum(keys[u][4] for u in p)) for p in patterns]
    keep = [i for i, val in enumerate(values) if val > 0]
    patterns = [patterns[i] for i in keep]
    values = [values[i] for i in keep]
    usage = [dict(Counter(p)) for p in patterns]
    x = _milp(usage, values, {u: cap[u] for u in range(n)})

    pools = {u: list(members[keys[u]]) for u in range(n)}
    for lst in pools.values():
        lst.reverse()
    out: list[Cycle] = []
    for pat, k in sorted(zip(patterns, x)):
        for _ in range(k):
            out.append(canonical([pools[u].pop() for u in pat]))
    return sorted(out)
