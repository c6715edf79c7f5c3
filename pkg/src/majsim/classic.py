"""The 2-protocol: cancel, split, repeat, with stage-synchronised phases.

Each phase has four stages (Cancellation, Buffer1, Splitting, Buffer2) of ``L``
counted interactions each. Stage and in-stage step are stored separately so
the kernel never divides. A node that enters Buffer2 colored without having
split is Done and broadcasts its color; any inconsistency sets Fail, after
which outputs come from the background ambassador protocol.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .primitives import (AMB, BLACK, COLOR, DONE, EMPTY, FAIL, LAST, N_COMMON, WHITE,
                         AmbassadorState, ProtocolBase, amb_column_stable, amb_opinion,
                         amb_step)
from .sim import ALL_FAILED, NOT_STABLE, STABLE, PhaseRecord

PH, STG, STEP, SPLIT = N_COMMON, N_COMMON + 1, N_COMMON + 2, N_COMMON + 3
N_FIELDS = N_COMMON + 4

CANCEL, BUF1, SPLITTING, BUF2 = 0, 1, 2, 3

DEFAULT_C_LEN = 24.0


class Stage(enum.IntEnum):
    CANCELLATION = CANCEL
    BUFFER1 = BUF1
    SPLITTING = SPLITTING
    BUFFER2 = BUF2


def stage_length(n: int, c_len: float = DEFAULT_C_LEN) -> int:
    return max(1, math.ceil(c_len * math.log2(n)))


def phase_cap(n: int) -> int:
    return math.ceil(math.log2(n)) + 2


def stage_of(step: int, L: int) -> Stage:
    if not 0 <= step < 4 * L:
        raise ValueError(f"step {step} outside [0, {4 * L})")
    return Stage(step // L)


# ------------------------------------------------------------------ kernel
# Metric rows are indexed by phase: [black at entry, white at entry,
# nodes leaving Cancellation, of which empty].

@njit(cache=True, inline="always")
def done_broadcast(S, i, j):
    di = S[i, DONE]
    dj = S[j, DONE]
    if di and dj:
        if S[i, COLOR] != S[j, COLOR]:
            S[i, FAIL] = 1
            S[j, FAIL] = 1
        return
    if di:
        u = i
        v = j
    else:
        u = j
        v = i
    cu = S[u, COLOR]
    cv = S[v, COLOR]
    if cv != EMPTY and cv != cu:
        S[u, FAIL] = 1
    else:
        S[v, COLOR] = cu
        S[v, LAST] = cu
        S[v, DONE] = 1


@njit(cache=True, inline="always")
def enter_phase(S, x, p, cap, M):
    S[x, PH] = p
    S[x, STG] = CANCEL
    S[x, STEP] = 0
    if p >= cap:
        S[x, FAIL] = 1
        return
    c = S[x, COLOR]
    if c == BLACK:
        M[p, 0] += 1
    elif c == WHITE:
        M[p, 1] += 1


@njit(cache=True, inline="always")
def advance(S, x, sx, sy, py, L, cap, M):
    """Counter update for ``x`` given both pre-interaction stages."""
    if sx == BUF2 and sy == CANCEL:
        enter_phase(S, x, py, cap, M)  # pulled into the next phase
        return
    st = S[x, STEP] + 1
    if st < L:
        S[x, STEP] = st
        return
    S[x, STEP] = 0
    if sx == BUF2:
        enter_phase(S, x, S[x, PH] + 1, cap, M)
        return
    S[x, STG] = sx + 1
    if sx == CANCEL:
        p = S[x, PH]
        M[p, 2] += 1
        if S[x, COLOR] == EMPTY:
            M[p, 3] += 1
    elif sx == SPLITTING:
        if S[x, SPLIT] == 0:
            if S[x, COLOR] != EMPTY:
                S[x, DONE] = 1
        else:
            S[x, SPLIT] = 0


@njit(cache=True, inline="always")
def two_core(S, i, j, L, cap, M):
    """All 2-protocol rules except fail propagation and the ambassador."""
    if S[i, DONE] or S[j, DONE]:
        done_broadcast(S, i, j)
        return
    pi = S[i, PH]
    pj = S[j, PH]
    si = S[i, STG]
    sj = S[j, STG]
    gap = (4 * pi + si) - (4 * pj + sj)
    if gap > 1 or gap < -1:
        S[i, FAIL] = 1
        S[j, FAIL] = 1
        return
    ci = S[i, COLOR]
    cj = S[j, COLOR]
    if si == CANCEL and sj == CANCEL:
        if ci != EMPTY and cj != EMPTY and ci != cj:
            S[i, COLOR] = EMPTY
            S[j, COLOR] = EMPTY
    elif si == SPLITTING and sj == SPLITTING:
        if ci != EMPTY and cj == EMPTY and S[i, SPLIT] == 0:
            S[j, COLOR] = ci
            S[j, LAST] = ci
            S[i, SPLIT] = 1
            S[j, SPLIT] = 1
        elif cj != EMPTY and ci == EMPTY and S[j, SPLIT] == 0:
            S[i, COLOR] = cj
            S[i, LAST] = cj
            S[i, SPLIT] = 1
            S[j, SPLIT] = 1
    advance(S, i, si, sj, pj, L, cap, M)
    advance(S, j, sj, si, pi, L, cap, M)


@njit(cache=True)
def two_kernel(S, i, j, P, M):
    amb_step(S, i, j)
    if S[i, FAIL] or S[j, FAIL]:
        S[i, FAIL] = 1
        S[j, FAIL] = 1
        return
    two_core(S, i, j, P[0], P[1], M)


@njit(cache=True)
def fail_state(S):
    """0: nobody failed, 1: some failed, 2: all failed."""
    some = False
    every = True
    for k in range(S.shape[0]):
        if S[k, FAIL]:
            some = True
        else:
            every = False
    if every:
        return 2
    return 1 if some else 0


@njit(cache=True)
def two_stable(S, P):
    f = fail_state(S)
    if f == 2:
        return STABLE if amb_column_stable(S) else ALL_FAILED
    if f == 1:
        return NOT_STABLE
    c = S[0, COLOR]
    for k in range(S.shape[0]):
        if S[k, DONE] == 0 or S[k, COLOR] != c:
            return NOT_STABLE
    return STABLE


def color_outputs(S: np.ndarray) -> np.ndarray:
    """Fail -> ambassador opinion; else current color, or last held color."""
    out = np.where(S[:, COLOR] != EMPTY, S[:, COLOR], S[:, LAST])
    return np.where(S[:, FAIL] == 1, amb_opinion(S[:, AMB]), out)


# ---------------------------------------------------------------- protocol

class TwoProtocol(ProtocolBase):
    name = "two"
    kernel = staticmethod(two_kernel)
    stable = staticmethod(two_stable)

    def __init__(self, n: int, black_count: int, c_len: float = DEFAULT_C_LEN):
        super().__init__(n, black_count)
        self.c_len = c_len
        self.L = stage_length(n, c_len)
        self.cap = phase_cap(n)
        self.params = np.array([self.L, self.cap], np.int64)

    def initial_states(self):
        return self._init_common(N_FIELDS)

    def new_metrics(self):
        return np.zeros((self.cap + 1, 4), np.int64)

    def on_start(self, S, M):
        M[0, 0] = int(np.sum(S[:, COLOR] == BLACK))
        M[0, 1] = int(np.sum(S[:, COLOR] == WHITE))

    def default_max_interactions(self):
        n = self.n
        fast = 4 * self.L * (self.cap + 1) * n
        return max(super().default_max_interactions(), fast) + ambassador_allowance(n)

    def outputs(self, S):
        return color_outputs(S)

    def phase_log(self, S, M):
        return phase_records(M, self.n)


def ambassador_allowance(n: int) -> int:
    """Interaction budget for finishing on the background ambassador."""
    return 20 * n * n * max(1, math.ceil(math.log(n)))


def phase_records(M: np.ndarray, n: int, oos=None) -> list[PhaseRecord]:
    """Phase records from entry/exit tallies; phases nobody reached are omitted.

    A phase's record is kept only when every node entered it, so partial
    tallies from a phase cut short by Done or Fail do not masquerade as data.
    """
    out = []
    for p in range(M.shape[0]):
        b, w, left, empty = (int(x) for x in M[p, :4])
        if b + w == 0 and left == 0:
            continue
        if left < n:
            frac = -1.0
        else:
            frac = empty / left
        out.append(PhaseRecord(
            phase_index=p, empty_fraction_after_cancel=frac,
            out_of_sync_count=0 if oos is None else int(oos[p]),
            majority_minus_minority=b - w, black_at_start=b, white_at_start=w))
    return out


# ------------------------------------------------------------ pure interface

@dataclass(frozen=True)
class TwoState:
    color: int = EMPTY
    phase: int = 0
    step: int = 0
    done: bool = False
    split_used: bool = False
    fail: bool = False
    ambassador: AmbassadorState = AmbassadorState(BLACK, True)
    last: int = EMPTY

    def row(self, L: int) -> np.ndarray:
        r = np.zeros(N_FIELDS, np.int64)
        r[COLOR] = self.color
        r[AMB] = self.ambassador.code
        r[FAIL] = int(self.fail)
        r[DONE] = int(self.done)
        r[LAST] = self.last if self.last != EMPTY else self.color
        r[PH] = self.phase
        r[STG] = self.step // L
        r[STEP] = self.step % L
        r[SPLIT] = int(self.split_used)
        return r

    @classmethod
    def from_row(cls, r, L: int) -> "TwoState":
        return cls(color=int(r[COLOR]), phase=int(r[PH]), step=int(r[STG] * L + r[STEP]),
                   done=bool(r[DONE]), split_used=bool(r[SPLIT]), fail=bool(r[FAIL]),
                   ambassador=AmbassadorState.from_code(int(r[AMB])), last=int(r[LAST]))


def two_transition(u: TwoState, v: TwoState, L: int, cap: int):
    """Apply one interaction to a pair of states."""
    S = np.stack([u.row(L), v.row(L)])
    M = np.zeros((cap + 2, 4), np.int64)
    two_kernel(S, 0, 1, np.array([L, cap], np.int64), M)
    return TwoState.from_row(S[0], L), TwoState.from_row(S[1], L)


def two_output(u: TwoState) -> int:
    if u.fail:
        return u.ambassador.opinion
    if u.done or u.color != EMPTY:
        return u.color
    return u.last
