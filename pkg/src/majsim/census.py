"""Census of abstract protocol states actually visited.

Implementation rows carry bookkeeping (shadow epoch and wrap counters,
per-phase interaction counts, stale fields of inactive modes). Each protocol
has an encoder that maps a row to its abstract state, packed into an int64.
The census runs a trial, encodes both agents after every interaction and
counts distinct codes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from . import classic, threehalves as th
from .primitives import AMB, COLOR, DONE, EMPTY, FAIL, LAST, AmbassadorProtocol
from .sim import ALL_FAILED, NOT_STABLE, PairMode, Population, _shift, draw_pair

CENSUS_PROTOCOLS = ("ambassador", "two", "three-halves")

_EMPTY_SLOT = -1


@njit(cache=True, inline="always")
def _put(code, v, bits):
    return (code << bits) | v


@njit(cache=True)
def encode_ambassador(S, x, P):
    return S[x, AMB]


@njit(cache=True)
def encode_two(S, x, P):
    amb = S[x, AMB]
    if S[x, FAIL]:
        return _put(1, amb, 2)
    c = S[x, COLOR]
    if S[x, DONE]:
        return _put(_put(2, c, 2), amb, 2)
    last = S[x, LAST] if c == EMPTY else 0
    code = _put(3, c, 2)
    code = _put(code, last, 2)
    code = _put(code, S[x, classic.PH], 8)
    code = _put(code, S[x, classic.STG], 2)
    code = _put(code, S[x, classic.STEP], 20)
    code = _put(code, S[x, classic.SPLIT], 1)
    return _put(code, amb, 2)


@njit(cache=True)
def encode_threehalves(S, x, P):
    amb = S[x, AMB]
    if S[x, FAIL]:
        return _put(1, amb, 2)
    c = S[x, COLOR]
    last = S[x, LAST] if c == EMPTY else 0
    role = S[x, th.ROLE]
    fb = S[x, th.FB]
    token = S[x, th.TOKEN] if fb else 0
    if role == th.FRESH:
        return _put(_put(2, c, 2), amb, 2)
    if role != th.WORKER:
        code = _put(3, role, 2)
        code = _put(code, S[x, th.GAMMA], 20)
        code = _put(code, S[x, th.GATE], 1)
        code = _put(code, S[x, DONE], 1)
        code = _put(code, c, 2)
        code = _put(code, S[x, LAST], 2)
        code = _put(code, fb, 1)
        code = _put(code, token, 2)
        return _put(code, amb, 2)
    if S[x, DONE]:
        code = _put(4, c, 2)
        code = _put(code, fb, 1)
        code = _put(code, token, 2)
        return _put(code, amb, 2)
    mode = S[x, th.MODE]
    code = _put(_put(5, mode, 2), c, 2)
    code = _put(code, last, 2)
    if mode == th.WARMUP or mode == th.WAITING:
        code = _put(code, S[x, classic.PH], 2)
        code = _put(code, S[x, classic.STG], 2)
        code = _put(code, S[x, classic.STEP] if mode == th.WARMUP else 0, 20)
        code = _put(code, S[x, classic.SPLIT] if mode == th.WARMUP else 0, 1)
    elif mode == th.MAIN:
        code = _put(code, S[x, th.SLOT], 6)
        code = _put(code, S[x, th.EPOCH] % 3, 2)
        code = _put(code, S[x, th.SYNC], 1)
        code = _put(code, S[x, th.PHI], 5)
        code = _put(code, S[x, th.R0], 2)
        code = _put(code, S[x, th.R1], 2)
        code = _put(code, S[x, th.R2], 2)
        code = _put(code, S[x, classic.SPLIT], 1)
    else:
        code = _put(code, S[x, th.SLOT], 6)
        code = _put(code, S[x, th.FBWAIT], 1)
        code = _put(code, S[x, th.FBCYC], 6)
        code = _put(code, token, 2)
        code = _put(code, S[x, classic.SPLIT], 1)
        code = _put(code, S[x, th.PHI], 1)
    return _put(code, amb, 2)


@njit(cache=True, inline="always")
def _mix(k):
    k = (k ^ (k >> 31)) * 0x7FB5D329728EA185
    return k ^ (k >> 27)


@njit(cache=True)
def _insert(table, code):
    """Open-addressing set insert; returns 1 if ``code`` was new."""
    mask = table.shape[0] - 1
    h = _mix(code) & mask
    while True:
        v = table[h]
        if v == code:
            return 0
        if v == _EMPTY_SLOT:
            table[h] = code
            return 1
        h = (h + 1) & mask


@njit(cache=True)
def _grow_needed(size, table):
    return 2 * size > table.shape[0]


@njit
def census_drive(kernel, stable, encode, S, P, M, rs, ordered, count, cadence, limit,
                 table, size):
    """Run like ``sim.drive`` while inserting every touched agent's code.

    Stops early when the table gets half full so the caller can grow it.
    Returns ``(count, code, size)``; code is 0 when interrupted for growth.
    """
    n = S.shape[0]
    sh_n = _shift(n)
    sh_m = _shift(n - 1)
    next_check = count + cadence - count % cadence
    while count < limit:
        i, j = draw_pair(rs, n, sh_n, sh_m, ordered)
        kernel(S, i, j, P, M)
        size += _insert(table, encode(S, i, P))
        size += _insert(table, encode(S, j, P))
        count += 1
        if count == next_check:
            code = stable(S, P)
            if code != NOT_STABLE:
                return count, code, size
            next_check += cadence
            if _grow_needed(size, table):
                return count, 0, size
    return count, -1, size


def _rehash(table: np.ndarray) -> np.ndarray:
    new = np.full(table.shape[0] * 4, _EMPTY_SLOT, np.int64)
    for c in table[table != _EMPTY_SLOT]:
        _insert(new, c)
    return new


def make_protocol(name: str, n: int, black_count: int):
    if name == "ambassador":
        return AmbassadorProtocol(n, black_count, engine="agents"), encode_ambassador
    if name == "two":
        return classic.TwoProtocol(n, black_count), encode_two
    if name == "three-halves":
        return th.ThreeHalvesProtocol(n, black_count), encode_threehalves
    raise ValueError(f"no census encoder for protocol {name!r}")


def visited_codes(name: str, n: int, black_count: int, seed: int) -> np.ndarray:
    """Sorted distinct abstract-state codes seen in one trial."""
    proto, encode = make_protocol(name, n, black_count)
    pop = Population(n, proto.initial_states(), seed)
    S = pop.states
    P = proto.params
    M = proto.new_metrics()
    proto.on_start(S, M)
    table = np.full(1 << 12, _EMPTY_SLOT, np.int64)
    size = 0
    for x in range(n):
        size += _insert(table, encode(S, x, P))
    count = 0
    limit = proto.default_max_interactions()
    code = 0
    while code == 0:
        if _grow_needed(size, table):
            table = _rehash(table)
        count, code, size = census_drive(
            proto.kernel, proto.stable, encode, S, P, M, pop.rng.state,
            proto.pair_mode is PairMode.ORDERED, count, n, limit, table, size)
    # after an all-fail the remaining dynamics only touch the ambassador
    # column, whose four values are already encoded under the fail tag
    if code == ALL_FAILED:
        for a in range(4):
            S[:, AMB] = a
            _insert(table, encode(S, 0, P))
    return np.sort(table[table != _EMPTY_SLOT])


@dataclass
class StateCensus:
    protocol: str
    n: int
    distinct_abstract_states: int


def state_census(name: str, ns: Sequence[int], trials: int = 1, seed: int = 0,
                 black_count=None) -> list[StateCensus]:
    """Distinct abstract states over ``trials`` runs per ``n`` (margin 1 by default)."""
    out = []
    for n in ns:
        b = (n + 2) // 2 if black_count is None else black_count(n)
        codes = [visited_codes(name, n, b, seed + k) for k in range(trials)]
        out.append(StateCensus(name, n, int(np.unique(np.concatenate(codes)).size)))
    return out


@dataclass
class CensusFit:
    slope: float
    intercept: float
    r2: float
    beta: float


def fit_census(rows: Sequence[StateCensus]) -> CensusFit:
    """Linear fit of census against log2 n plus the log-log exponent in log2 n."""
    x = np.array([math.log2(r.n) for r in rows])
    y = np.array([r.distinct_abstract_states for r in rows], float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    beta = float(np.polyfit(np.log(x), np.log(y), 1)[0])
    return CensusFit(float(slope), float(intercept), r2, beta)
