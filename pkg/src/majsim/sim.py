"""Uniform random-pair scheduler, simulation loop and run records.

Every protocol stores its population as an ``int64`` array of shape ``(n, F)``
(one row per agent) and exposes a jitted pairwise kernel plus a jitted
stability check. :func:`run` drives the kernel with pairs drawn inside the jitted loop from a
xoshiro256** generator, so a run is fully determined by its seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import rng as rng_mod
from .rng import Rng, bounded

RNG_ALGORITHM = rng_mod.NAME

# Return codes of a protocol's stability check.
NOT_STABLE = 0
STABLE = 1
ALL_FAILED = 2
TIMED_OUT = -1


class PairMode(enum.Enum):
    UNORDERED = "unordered"
    ORDERED = "ordered"


def make_rng(seed: int) -> Rng:
    """Seeded generator used for every random draw in the package."""
    return Rng(seed)


@njit(cache=True, inline="always")
def _shift(bound):
    sh = 64
    x = bound - 1
    while x > 0:
        x >>= 1
        sh -= 1
    return min(sh, 63)


@njit(cache=True, inline="always")
def draw_pair(rs, n, sh_n, sh_m, ordered):
    i = bounded(rs, n, sh_n)
    j = bounded(rs, n - 1, sh_m)
    if j >= i:
        j += 1
    if not ordered and j < i:
        return j, i
    return i, j


@njit(cache=True)
def _fill_pairs(rs, n, ordered, us, vs):
    sh_n = _shift(n)
    sh_m = _shift(n - 1)
    for k in range(us.shape[0]):
        us[k], vs[k] = draw_pair(rs, n, sh_n, sh_m, ordered)


def sample_pairs(rng: Rng, n: int, mode: PairMode, size: int):
    """Draw ``size`` interacting pairs as two index arrays.

    Unordered pairs come back with the smaller index first.
    """
    if n < 2:
        raise ValueError(f"need at least two agents, got n={n}")
    us = np.empty(size, np.int64)
    vs = np.empty(size, np.int64)
    _fill_pairs(rng.state, n, mode is PairMode.ORDERED, us, vs)
    return us, vs


def sample_pair(rng: Rng, n: int, mode: PairMode) -> tuple[int, int]:
    u, v = sample_pairs(rng, n, mode, 1)
    return int(u[0]), int(v[0])


def parallel_time(interactions: int, n: int) -> Fraction:
    if n < 1:
        raise ValueError("n must be positive")
    return Fraction(int(interactions), int(n))


def default_max_interactions(n: int) -> int:
    lg = math.ceil(math.log2(n)) if n > 1 else 1
    return 50 * n * lg * lg


@dataclass
class PhaseRecord:
    phase_index: int
    empty_fraction_after_cancel: float
    out_of_sync_count: int
    majority_minus_minority: int
    black_at_start: int = 0
    white_at_start: int = 0


@dataclass
class RunResult:
    protocol: str
    n: int
    black_count: int
    seed: int
    stabilization_interactions: int
    parallel_time: Fraction
    correct: Optional[bool]
    used_fallback: bool
    used_ambassador: bool
    timed_out: bool
    phase_log: list[PhaseRecord] = field(default_factory=list)
    critical_phase_index: Optional[int] = None
    max_out_of_sync: int = 0
    empty_frac_min: Optional[float] = None
    extra: dict = field(default_factory=dict)


@dataclass
class Population:
    """Agent states of one trial plus its random source."""

    n: int
    states: np.ndarray
    seed: int
    interactions: int = 0
    rng: Rng = field(init=False, repr=False)

    def __post_init__(self):
        if self.states.shape[0] != self.n:
            raise ValueError("state array length must equal n")
        self.rng = make_rng(self.seed)


# Not cached: its signature holds dispatcher types, which numba cannot
# re-pickle once a kernel module is edited.
@njit(nogil=True)
def drive(kernel, stable, S, P, M, rs, ordered, count, next_check, cadence, limit):
    """Schedule random pairs and apply ``kernel`` until a check point fires.

    The stability check runs whenever ``count`` reaches ``next_check``. Returns
    ``(count, code)`` with the first nonzero check code, or ``TIMED_OUT`` when
    ``count`` reaches ``limit``.
    """
    n = S.shape[0]
    sh_n = _shift(n)
    sh_m = _shift(n - 1)
    while count < limit:
        i, j = draw_pair(rs, n, sh_n, sh_m, ordered)
        kernel(S, i, j, P, M)
        count += 1
        if count == next_check:
            code = stable(S, P)
            if code != 0:
                return count, code
            next_check += cadence
    return count, -1


def majority_color(black_count: int, n: int) -> int:
    from .primitives import BLACK, WHITE

    if 2 * black_count == n:
        raise ValueError("inputs must have a strict majority")
    return BLACK if 2 * black_count > n else WHITE


def run(protocol, population: Population, max_interactions: Optional[int] = None,
        cadence: Optional[int] = None) -> RunResult:
    """Simulate until the protocol's stability predicate holds or the budget ends.

    The predicate is evaluated at interaction counts ``0, cadence, 2*cadence, ...``
    (``cadence`` defaults to ``n``); the stabilization count is the first check
    point where it holds.
    """
    n = population.n
    if n < 2:
        raise ValueError("need at least two agents")
    if max_interactions is None:
        max_interactions = protocol.default_max_interactions()
    cadence = n if cadence is None else int(cadence)
    if cadence < 1:
        raise ValueError("cadence must be positive")
    S = population.states
    P = protocol.params
    M = protocol.new_metrics()
    protocol.on_start(S, M)
    rng = population.rng
    count = population.interactions
    code = protocol.stable(S, P)
    if code == NOT_STABLE:
        count, code = drive(protocol.kernel, protocol.stable, S, P, M, rng.state,
                            protocol.pair_mode is PairMode.ORDERED, count, count + cadence,
                            cadence, max_interactions)
    if code == ALL_FAILED:
        count = protocol.finish_with_ambassador(S, rng, count, cadence, max_interactions)
        code = STABLE if count is not None else -1
        if count is None:
            count = max_interactions
    population.interactions = count
    timed_out = code != STABLE
    correct = None
    if not timed_out:
        out = protocol.outputs(S)
        truth = majority_color(protocol.black_count, n)
        correct = bool(np.all(out == truth))
    return protocol.result(S, M, population.seed, count, timed_out, correct)


def run_trial(protocol, seed: int, max_interactions: Optional[int] = None,
              cadence: Optional[int] = None) -> RunResult:
    pop = Population(protocol.n, protocol.initial_states(), seed)
    return run(protocol, pop, max_interactions, cadence)


def critical_phase(records: Sequence[PhaseRecord], n: int) -> Optional[int]:
    for r in records:
        if 3 * abs(r.majority_minus_minority) >= n:
            return r.phase_index
    return None
