"""Plain-text exchange instances.

Format::

    # comments and blank lines are ignored
    <vertex count>
    <id> <patient blood> <donor blood> <sensitized 0/1> <critical 0/1> [sensitization level]
    ...                                    (one line per vertex)
    <from id> <to id>                      (one line per directed edge, donor of
    ...                                     <from> gives to patient of <to>)
"""

from __future__ import annotations

from .model import BloodType, CompatGraph, PairRecord, PoolState, abo_compatible


class InstanceError(ValueError):
    pass


def _flag(tok: str, lineno: int) -> bool:
    if tok not in ("0", "1"):
        raise InstanceError(f"line {lineno}: flag must be 0 or 1, got {tok!r}")
    return tok == "1"


def loads(text: str) -> tuple[PoolState, CompatGraph]:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append((lineno, s.split()))
    if not lines:
        raise InstanceError("empty instance")
    lineno, head = lines[0]
    if len(head) != 1 or not head[0].isdigit():
        raise InstanceError(f"line {lineno}: expected vertex count, got {' '.join(head)!r}")
    count = int(head[0])
    if len(lines) < 1 + count:
        raise InstanceError(f"expected {count} vertex lines, found {len(lines) - 1}")

    records = []
    for lineno, tok in lines[1:1 + count]:
        if len(tok) not in (5, 6):
            raise InstanceError(f"line {lineno}: vertex line needs 5 or 6 fields, got {len(tok)}")
        try:
            vid = int(tok[0])
            patient, donor = BloodType(tok[1].upper()), BloodType(tok[2].upper())
        except ValueError as e:
            raise InstanceError(f"line {lineno}: {e}") from None
        sens, crit = _flag(tok[3], lineno), _flag(tok[4], lineno)
        level = float(tok[5]) if len(tok) == 6 else float(sens)
        records.append(PairRecord(vid, patient, donor, level, sens, crit, 0))
    pool = PoolState()
    try:
        pool.add(records)
    except ValueError as e:
        raise InstanceError(str(e)) from None

    edges = []
    for lineno, tok in lines[1 + count:]:
        if len(tok) != 2:
            raise InstanceError(f"line {lineno}: edge line needs 2 fields")
        w, v = int(tok[0]), int(tok[1])
        if w not in pool.pairs or v not in pool.pairs:
            raise InstanceError(f"line {lineno}: edge {w}->{v} references an unknown vertex")
        if w == v:
            raise InstanceError(f"line {lineno}: self-loop on {w}")
        if not abo_compatible(pool.pairs[v].patient_blood, pool.pairs[w].donor_blood):
            raise InstanceError(f"line {lineno}: edge {w}->{v} is not ABO compatible")
        edges.append((w, v))

    full = {
        (w.id, v.id)
        for w in records for v in records
        if w.id != v.id and abo_compatible(v.patient_blood, w.donor_blood)
    }
    g = CompatGraph.from_edges(pool.pairs, edges, abo_exact=set(edges) == full)
    return pool, g


def dumps(pool: PoolState, g: CompatGraph) -> str:
    out = [str(len(g.vertices))]
    for v in g.vertices:
        r = pool.pairs[v]
        out.append(f"{r.id} {r.patient_blood} {r.donor_blood} {int(r.highly_sensitized)} "
                   f"{int(r.critical)} {r.sensitization!r}")
    out += [f"{w} {v}" for w, v in g.edges]
    return "\n".join(out) + "\n"
