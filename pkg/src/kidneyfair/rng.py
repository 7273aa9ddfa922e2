"""Keyed random streams.

Every random decision in a run is tied to a key (step, pair id, donor/patient
pairing) rather than to a position in a single sequential stream.  Two runs
that share a seed therefore see the same arrivals, crossmatch outcomes and
perish/criticality coin flips for every pair they have in common, even when
their matching policies diverge.  This is what makes paired-seed comparisons
between policies valid.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_ARRIVALS = 0
_CROSSMATCH = 1
_PERISH = 2
_CRITICAL = 3

_U64 = float(2**64)


def replication_seed(seed: int, replication: int) -> int:
    """Counter-based sub-seed for replication ``replication`` of base ``seed``.

    The value depends only on (seed, replication), so adding replications never
    changes the streams of earlier ones.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(replication,))
    return int(ss.generate_state(2, dtype=np.uint64)[0])


class Streams:
    """Source of all randomness for one simulated run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._prefix = struct.pack("<Q", self.seed & 0xFFFFFFFFFFFFFFFF)

    def __repr__(self) -> str:
        return f"Streams({self.seed})"

    def arrivals(self, t: int) -> np.random.Generator:
        """Generator for the arrival batch of step ``t``."""
        return np.random.default_rng([self.seed & 0xFFFFFFFF, self.seed >> 32, _ARRIVALS, t])

    def _uniform(self, tag: int, a: int, b: int) -> float:
        h = hashlib.blake2b(self._prefix + struct.pack("<Bqq", tag, a, b), digest_size=8)
        return int.from_bytes(h.digest(), "little") / _U64

    def crossmatch(self, donor_id: int, patient_id: int) -> float:
        """Uniform draw for the tissue crossmatch of donor ``donor_id`` with patient ``patient_id``."""
        return self._uniform(_CROSSMATCH, donor_id, patient_id)

    def perish(self, t: int, pair_id: int) -> float:
        return self._uniform(_PERISH, t, pair_id)

    def become_critical(self, t: int, pair_id: int) -> float:
        return self._uniform(_CRITICAL, t, pair_id)
