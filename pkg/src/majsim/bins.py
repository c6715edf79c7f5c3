"""Batch balls-into-bins with the Left strategy and a one-choice baseline.

The ``n`` bins are split into a left half and a right half. A Left allocation
samples one bin from each half and gives the ball to the strictly lower bin,
the left one on ties. Time ``t`` counts completed batches of ``n`` balls, and a
bin with ``l`` balls at time ``t`` has ``t - l`` holes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .rng import Rng, bounded, shift_for

ALPHA_SCALE = 1.3
ALPHA_BASE = 2.8
TAIL_SCALE = 13.5
TAIL_BASE = 3.4
TAIL_OFFSET = 5
DEFAULT_SLACK = 0.15


class Strategy(enum.Enum):
    LEFT = "left"
    ONE_CHOICE = "one-choice"


@dataclass
class BinsState:
    """Bin loads; the first ``n // 2`` entries form the left half."""

    counts: np.ndarray
    balls: int = 0

    @classmethod
    def empty(cls, n: int) -> "BinsState":
        if n < 1:
            raise ValueError("need at least one bin")
        return cls(np.zeros(n, np.int64))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def half(self) -> int:
        return self.n // 2

    @property
    def left(self) -> np.ndarray:
        return self.counts[:self.half]

    @property
    def right(self) -> np.ndarray:
        return self.counts[self.half:]

    @property
    def batch(self) -> int:
        return self.balls // self.n


@njit(cache=True)
def _left_balls(counts, half, m, rs, sh_l, sh_r):
    nr = counts.shape[0] - half
    for _ in range(m):
        u = bounded(rs, half, sh_l)
        v = half + bounded(rs, nr, sh_r)
        if counts[v] < counts[u]:
            counts[v] += 1
        else:
            counts[u] += 1


@njit(cache=True)
def _onechoice_balls(counts, m, rs, sh):
    n = counts.shape[0]
    for _ in range(m):
        counts[bounded(rs, n, sh)] += 1


def _check_left(state: BinsState):
    if state.n < 2 or state.n % 2:
        raise ValueError("the Left strategy needs an even number of bins, n >= 2")


def allocate_left(state: BinsState, rng: Rng, m: int = 1) -> BinsState:
    """Place ``m`` balls with the Left rule, in place."""
    _check_left(state)
    h = state.half
    _left_balls(state.counts, h, int(m), rng.state, shift_for(h), shift_for(state.n - h))
    state.balls += int(m)
    return state


def allocate_onechoice(state: BinsState, rng: Rng, m: int = 1) -> BinsState:
    """Place ``m`` balls into uniformly random bins, in place."""
    if state.n > 1:
        _onechoice_balls(state.counts, int(m), rng.state, shift_for(state.n))
    else:
        state.counts[0] += int(m)
    state.balls += int(m)
    return state


def allocate_ball_left(state: BinsState, rng: Rng) -> BinsState:
    return allocate_left(state, rng, 1)


def allocate_ball_onechoice(state: BinsState, rng: Rng) -> BinsState:
    return allocate_onechoice(state, rng, 1)


def run_batches(n: int, batches: int, seed: int,
                strategy: Strategy = Strategy.LEFT) -> BinsState:
    state = BinsState.empty(n)
    rng = Rng(seed)
    alloc = allocate_left if strategy is Strategy.LEFT else allocate_onechoice
    return alloc(state, rng, n * batches)


@dataclass
class HolesProfile:
    """``alpha[i]``: fraction of bins with at least ``i`` holes (``alpha[0] == 1``)."""

    alpha: np.ndarray
    Q: int
    t: int


def holes_profile(state: BinsState) -> HolesProfile:
    if state.balls % state.n:
        raise ValueError("holes are defined at batch boundaries")
    t = state.batch
    holes = np.maximum(t - state.counts, 0)
    Q = int(holes.max(initial=0))
    tally = np.bincount(holes, minlength=Q + 2)
    # alpha[i] = #bins with holes >= i, normalized
    alpha = tally[::-1].cumsum()[::-1] / state.n
    return HolesProfile(alpha.astype(float), Q, t)


def alpha_bound(i: int) -> float:
    return ALPHA_SCALE * ALPHA_BASE ** (-i)


def tail_bound(i: int) -> float:
    return TAIL_SCALE * TAIL_BASE ** (-i)


@dataclass
class Violation:
    i: int
    alpha: float
    bound: float
    kind: str  # "bound" or "support"


def check_invariant1(profile: HolesProfile, n: int, slack: float = DEFAULT_SLACK,
                     c1: float = 2.0, c2: Optional[float] = None) -> list[Violation]:
    """Every ``i`` where the hole profile breaks the geometric bound.

    The bound is checked for ``1 <= i <= c1 * log2 n`` with allowance
    ``(1 + slack)`` plus ``2 / n``. With ``c2`` set, any holes at
    ``i >= c2 * log2 n`` are reported as well.
    """
    lg = math.log2(n)
    out = []
    top = int(math.floor(c1 * lg))
    for i in range(1, top + 1):
        a = float(profile.alpha[i]) if i < len(profile.alpha) else 0.0
        b = alpha_bound(i) * (1 + slack) + 2.0 / n
        if a > b:
            out.append(Violation(i, a, b, "bound"))
    if c2 is not None:
        start = int(math.ceil(c2 * lg))
        for i in range(start, len(profile.alpha)):
            if profile.alpha[i] > 0:
                out.append(Violation(i, float(profile.alpha[i]), 0.0, "support"))
    return out


def max_gap(state: BinsState) -> int:
    """Maximum load minus the rounded mean load."""
    return int(state.counts.max()) - int(round(state.balls / state.n))


def hole_tail(profiles: list[HolesProfile], imax: int = 10) -> np.ndarray:
    """Empirical ``Pr[q >= i + 5]`` for ``i = 1..imax``, pooled over bins and runs."""
    out = np.zeros(imax)
    for p in profiles:
        for i in range(1, imax + 1):
            k = i + TAIL_OFFSET
            if k < len(p.alpha):
                out[i - 1] += p.alpha[k]
    return out / max(1, len(profiles))


# ---------------------------------------------------------- receive rates

@njit(cache=True)
def _receives(counts, half, target, trials, rs, sh_l, sh_r):
    """Count how often ``target`` would get the next ball, state untouched."""
    nr = counts.shape[0] - half
    hits = 0
    for _ in range(trials):
        u = bounded(rs, half, sh_l)
        v = half + bounded(rs, nr, sh_r)
        if counts[v] < counts[u]:
            w = v
        else:
            w = u
        if w == target:
            hits += 1
    return hits


def receive_probability(state: BinsState, bin_index: int, rng: Rng,
                        trials: int) -> tuple[float, float]:
    """Monte-Carlo probability that ``bin_index`` gets the next Left ball.

    Returns ``(estimate, standard error)``.
    """
    _check_left(state)
    h = state.half
    hits = _receives(state.counts, h, int(bin_index), int(trials), rng.state,
                     shift_for(h), shift_for(state.n - h))
    p = hits / trials
    return p, math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)


def receive_floor(state: BinsState, bin_index: int) -> float:
    """Lower bound ``(2 - 2 f) / n`` for a bin at level ``l``.

    For a right bin ``f`` is the fraction of left bins at level ``<= l``; for a
    left bin it is the fraction of right bins at level ``<= l``.
    """
    l = state.counts[bin_index]
    other = state.left if bin_index >= state.half else state.right
    f = float(np.mean(other <= l))
    return (2 - 2 * f) / state.n


def low_bins(state: BinsState, depth: int = TAIL_OFFSET) -> np.ndarray:
    """Indices of bins with at least ``depth`` holes."""
    return np.nonzero(state.counts <= state.batch - depth)[0]
