"""Counter-based, splittable seed streams.

Every random draw in a simulation comes from a named stream. Word ``i`` of
stream ``name`` under seed ``s`` is the first 8 bytes, read little-endian, of
``SHA-256("pibttp/<name>/<s>/<i>")`` (ASCII, decimal integers). From those
64-bit words:

* ``uniform()`` returns ``(word >> 11) * 2**-53``, a double in ``[0, 1)``;
* ``below(n)`` rejects words ``>= (2**64 // n) * n`` and returns ``word % n``.

The recipe needs nothing beyond SHA-256, so any language can replay a run.
Streams used by the simulator: ``epsilon``, ``taskset`` and ``selection``.
"""
from __future__ import annotations

import hashlib

_TWO64 = 1 << 64


class SeedStream:
    def __init__(self, seed: int, name: str):
        self.seed = int(seed)
        self.name = name
        self.counter = 0
        self._prefix = f"pibttp/{name}/{self.seed}/".encode("ascii")

    def next_u64(self) -> int:
        digest = hashlib.sha256(self._prefix + str(self.counter).encode("ascii")).digest()
        self.counter += 1
        return int.from_bytes(digest[:8], "little")

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = (_TWO64 // n) * n
        while True:
            word = self.next_u64()
            if word < limit:
                return word % n

    def choice(self, seq):
        return seq[self.below(len(seq))]


def distinct_epsilons(seed: int, n: int) -> list[float]:
    """``n`` pairwise distinct values in the open interval (0, 1)."""
    stream = SeedStream(seed, "epsilon")
    out: list[float] = []
    seen: set[float] = set()
    while len(out) < n:
        e = stream.uniform()
        if e == 0.0 or e in seen:
            continue
        seen.add(e)
        out.append(e)
    return out
