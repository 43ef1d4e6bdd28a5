"""Counter-seeded pseudo-random streams usable from jitted kernels.

The generator is xoshiro256++ with a SplitMix64 seeding chain.  Each
replica of an experiment derives its own four-word state from
``(master_seed, replica_index)``, so any replica can be regenerated in
isolation, in any order, bit for bit.

Discrete draws avoid floating point entirely:

* a categorical draw compares one 64-bit word against precomputed
  integer cut points (``floor(cdf * 2**64)``, computed with
  :class:`fractions.Fraction` so the endpoints 0 and 1 are exact);
* a uniform index in ``[0, d)`` uses rejection below the largest
  multiple of ``d``, which removes modulo bias.

The jitted helpers mutate a ``uint64[4]`` state array in place.  The
thin :class:`RngStream` wrapper drives the same compiled code, so pure
Python call sites and fused kernels draw from identical streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO64 = 1 << 64


def _splitmix64(x: int) -> tuple[int, int]:
    """Advance a SplitMix64 counter; return (new_counter, output word)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return x, z


def seed_state(master_seed: int, replica_index: int) -> np.ndarray:
    """Derive a xoshiro256++ state for one replica of one experiment.

    Distinct ``(master_seed, replica_index)`` pairs land in distinct
    SplitMix64 counters, so streams never collide by construction.
    """
    if replica_index < 0:
        raise ValueError("replica_index must be non-negative")
    x = (master_seed + (replica_index + 1) * _GOLDEN) & _MASK64
    x, _ = _splitmix64(x)
    words = []
    for _ in range(4):
        x, w = _splitmix64(x)
        words.append(w)
    if not any(words):  # all-zero state is the one fixed point; dodge it
        words[0] = 1
    return np.array(words, dtype=np.uint64)


@njit(cache=True, inline="always")
def _rotl(x, k):
    return np.uint64((x << np.uint64(k)) | (x >> np.uint64(64 - k)))


@njit(cache=True, inline="always")
def next_u64(state):
    """xoshiro256++ step: return the next word, mutate state in place."""
    result = np.uint64(_rotl(np.uint64(state[0] + state[3]), 23) + state[0])
    t = np.uint64(state[1] << np.uint64(17))
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(cache=True, inline="always")
def next_index(state, d):
    """Uniform integer in [0, d) by rejection below the last multiple of d.

    The rejection limit is ``floor(2^64/d)*d``, which is at least
    ``2^64 - d + 1``, so any word ``u <= 2^64 - d`` is accepted without
    computing the limit; the division only runs for the (astronomically
    rare at small ``d``) top words.  Acceptance decisions and results
    are identical to the plain rejection loop, draw for draw.
    """
    d64 = np.uint64(d)
    neg_d = np.uint64(0) - d64  # 2^64 - d
    while True:
        u = next_u64(state)
        if u <= neg_d:
            break
        limit = np.uint64(neg_d // d64 * d64 + d64)  # == floor(2^64/d)*d
        if limit == np.uint64(0) or u < limit:
            break
    if d64 == np.uint64(1):
        return np.int64(0)
    if d64 == np.uint64(2):
        return np.int64(u & np.uint64(1))
    return np.int64(u % d64)


@njit(cache=True, inline="always")
def next_category(state, cuts):
    """Categorical draw against integer cut points.

    ``cuts`` has one entry per category except the last; a word below
    ``cuts[j]`` selects category ``j`` and anything else falls through
    to the final category.  With ``cuts[0] == 0`` the first category is
    impossible, which makes mass-one laws exact.
    """
    u = next_u64(state)
    for j in range(cuts.shape[0]):
        if u < cuts[j]:
            return j
    return cuts.shape[0]


def cdf_cuts(probabilities: tuple[Fraction, ...]) -> np.ndarray:
    """Integer cut points for :func:`next_category`.

    One entry per category except the last; category ``j`` wins with
    probability within ``2**-64`` of ``probabilities[j]``, exactly for
    zero/one masses.
    """
    total = Fraction(0)
    cuts = []
    for q in probabilities[:-1]:
        total += q
        cuts.append(int(total * _TWO64))
    return np.array(cuts, dtype=np.uint64)


@dataclass
class RngStream:
    """One replica-addressable random stream.

    Bit-for-bit reproducible: equal ``(master_seed, replica_index)``
    always yields the identical draw sequence, independent of platform
    and of whether draws happen from Python or inside a fused kernel.
    """

    master_seed: int
    replica_index: int = 0
    _state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._state = seed_state(self.master_seed, self.replica_index)

    @property
    def state(self) -> np.ndarray:
        """The live uint64[4] state; kernels may advance it in place."""
        return self._state

    def u64(self) -> int:
        return int(next_u64(self._state))

    def index(self, d: int) -> int:
        """Uniform integer in ``[0, d)``; rejects modulo bias."""
        if d <= 0:
            raise ValueError("d must be positive")
        return int(next_index(self._state, d))

    def category(self, cuts: np.ndarray) -> int:
        return int(next_category(self._state, cuts))
