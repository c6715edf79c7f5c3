"""Worker/clock protocol with O(log n) states.

Fresh agents pick a role at their first interaction: a first cancellation
(two fresh agents of opposite colors) makes the black agent a Right clock and
the white one a Left clock; every other first interaction makes a worker.

Clocks only count, and only when a Left and a Right clock meet: the smaller
counter increments, ties go to Left. The first counting cycle has length
``t_warm``; afterwards a cycle is one epoch of ``T_epoch`` ticks and the
counter value maps to a schedule slot (cancellation or splitting stage of a
phase, or catch-up).

Workers first run two phases of the 2-protocol on their own counters
(warmup). A worker that finishes warmup waits for a clock that has wrapped
once, then follows the epoch schedule read off clocks, running the epoch
dynamics (out-of-sync bookkeeping, special splits, fallback broadcast). The
fallback 2-protocol is also clock driven: fallback workers start together at
the next epoch boundary and use the phase slots of the schedule.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .classic import (BUF2, DEFAULT_C_LEN, N_FIELDS as N_TWO, PH, SPLIT, STG,
                      ambassador_allowance, fail_state, phase_records, stage_length, two_core)
from .epoch import M_BLACK, M_EMPTY, M_LEFT, M_OOS, M_OOS_END, M_OOS_IN, M_TRIG, M_U, M_WHITE
from .primitives import (AMB, BLACK, COLOR, DONE, EMPTY, FAIL, LAST, WHITE, AmbassadorState,
                         ProtocolBase, amb_column_stable, amb_opinion, amb_step)
from .sim import ALL_FAILED, NOT_STABLE, STABLE, critical_phase

(ROLE, MODE, GAMMA, GATE, WRAPS, SLOT, EPOCH, SYNC, PHI, R0, R1, R2, FB, TOKEN, FBWAIT, FBCYC,
 PINT) = range(N_TWO, N_TWO + 17)
N_FIELDS = N_TWO + 17

FRESH, WORKER, LEFT, RIGHT = 0, 1, 2, 3
WARMUP, WAITING, MAIN, FALLBACK = 0, 1, 2, 3

# parameter vector layout; the gamma -> slot table follows at P_TAB
(P_K, P_LP, P_LC, P_T, P_TW, P_LW, P_NS, P_EMAX, P_FBCAP, P_FEW, P_EROW, P_FROW, P_WROW,
 P_TAB) = range(14)

M_FEW = 5

DEFAULT_C_PHASE = 0.75
DEFAULT_C_CATCH = 0.3
DEFAULT_C_T = 20.0
# max unwrapped clock minus mean, in units of log2 log2 n; calibrated at
# n = 2^10 (worst 0.91 over 5 seeds) and frozen
CLOCK_SPREAD_C = 1.0


class Role(enum.IntEnum):
    FRESH = FRESH
    WORKER = WORKER
    LEFT_CLOCK = LEFT
    RIGHT_CLOCK = RIGHT


class Mode(enum.IntEnum):
    WARMUP = WARMUP
    WAITING = WAITING
    MAIN = MAIN
    FALLBACK = FALLBACK


class Slot(enum.Enum):
    CANCELLATION = "cancellation"
    SPLITTING = "splitting"
    CATCH_UP = "catch-up"


@dataclass(frozen=True)
class ThreeHalvesParams:
    """Schedule constants; stage lengths are in clock ticks."""

    n: int
    K: int
    E: int
    L_p: int
    L_c: int
    t_warm: int
    L_w: int
    grace_epochs: int = 1

    @classmethod
    def build(cls, n: int, c_phase: float = DEFAULT_C_PHASE, c_catch: float = DEFAULT_C_CATCH,
              c_t: float = DEFAULT_C_T, c_len: float = DEFAULT_C_LEN,
              grace_epochs: int = 1) -> "ThreeHalvesParams":
        lg = math.log2(n)
        K = max(1, math.ceil(math.sqrt(lg) - 1e-9))
        E = max(1, math.ceil(math.sqrt(lg) - 1e-9))
        while K * E < math.ceil(lg):
            E += 1
        L_p = max(1, math.ceil(c_phase * math.sqrt(lg)))
        L_c = max(1, math.ceil(c_catch * lg))
        t_warm = max(1, math.ceil(c_t * lg))
        return cls(n, K, E, L_p, L_c, t_warm, stage_length(n, c_len), grace_epochs)

    @property
    def slots(self) -> int:
        return 2 * self.K + 1

    @property
    def T_epoch(self) -> int:
        return 2 * self.K * self.L_p + self.L_c

    @property
    def emax(self) -> int:
        return self.E - 1 + self.grace_epochs

    @property
    def fallback_cycles(self) -> int:
        """Schedule cycles the fallback 2-protocol may use, K phases each."""
        return -(-(math.ceil(math.log2(self.n)) + 2) // self.K)

    @property
    def fallback_phases(self) -> int:
        return self.K * self.fallback_cycles

    def slot_table(self) -> np.ndarray:
        g = np.arange(self.T_epoch)
        return np.where(g < 2 * self.K * self.L_p, g // self.L_p, 2 * self.K).astype(np.int64)


def schedule_from_gamma(gamma: int, params: ThreeHalvesParams):
    """Map a clock value to ``(phase, Slot)``; catch-up is ``(None, CATCH_UP)``."""
    if not 0 <= gamma < params.T_epoch:
        raise ValueError("gamma out of range")
    if gamma >= 2 * params.K * params.L_p:
        return None, Slot.CATCH_UP
    s = gamma // params.L_p
    return s // 2, Slot.CANCELLATION if s % 2 == 0 else Slot.SPLITTING


# ------------------------------------------------------------------ kernel

@njit(cache=True, inline="always")
def _entry(S, x, row, M):
    c = S[x, COLOR]
    if c == BLACK:
        M[row, M_BLACK] += 1
    elif c == WHITE:
        M[row, M_WHITE] += 1


@njit(cache=True, inline="always")
def assign_roles(S, i, j, M, P):
    fi = S[i, ROLE] == FRESH
    fj = S[j, ROLE] == FRESH
    ci = S[i, COLOR]
    cj = S[j, COLOR]
    if fi and fj and ci != cj:
        if ci == BLACK:
            S[i, ROLE] = RIGHT
            S[j, ROLE] = LEFT
        else:
            S[i, ROLE] = LEFT
            S[j, ROLE] = RIGHT
        S[i, COLOR] = EMPTY
        S[j, COLOR] = EMPTY
        return
    wrow = P[P_WROW]
    if fi:
        S[i, ROLE] = WORKER
        _entry(S, i, wrow, M)
    if fj:
        S[j, ROLE] = WORKER
        _entry(S, j, wrow, M)


@njit(cache=True, inline="always")
def _inc_clock(S, x, P):
    g = S[x, GAMMA] + 1
    mod = P[P_T] if S[x, GATE] else P[P_TW]
    if g == mod:
        g = 0
        S[x, GATE] = 1
        S[x, WRAPS] += 1
    S[x, GAMMA] = g


@njit(cache=True, inline="always")
def tick_clocks(S, i, j, P):
    if S[i, ROLE] == LEFT:
        l = i
        r = j
    else:
        l = j
        r = i
    gl = S[l, GAMMA]
    gr = S[r, GAMMA]
    al = S[l, GATE]
    ar = S[r, GATE]
    if al == ar:
        if al == 0:
            diff = gl - gr
        else:
            T = P[P_T]
            d = (gl - gr) % T
            diff = d if d <= T // 2 else d - T
    elif al == 1:
        diff = gl + P[P_TW] - gr
    else:
        diff = gl - gr - P[P_TW]
    if diff <= 0:
        _inc_clock(S, l, P)
    else:
        _inc_clock(S, r, P)


@njit(cache=True, inline="always")
def start_fallback(S, x, token, P, M):
    """Switch worker ``x`` to the fallback 2-protocol.

    Fallback cycle 0 starts at the epoch boundary right after the trigger
    epoch. A main worker still in the trigger epoch (``EPOCH % 3 == token``)
    idles until that boundary; one already past it joins cycle 0 at its current
    slot. Workers that never reached the main schedule idle in catch-up.
    """
    K = P[P_K]
    S[x, FBCYC] = 0
    S[x, SPLIT] = 0
    S[x, PHI] = 0
    if S[x, MODE] == MAIN:
        c = S[x, R0 + (token + 2) % 3]
        S[x, COLOR] = c
        if c != EMPTY:
            S[x, LAST] = c
        S[x, MODE] = FALLBACK
        if S[x, EPOCH] % 3 == token:
            S[x, FBWAIT] = 1
        else:
            S[x, FBWAIT] = 0
            if S[x, SLOT] < 2 * K:
                _entry(S, x, P[P_FROW], M)
    else:
        S[x, MODE] = FALLBACK
        S[x, SLOT] = 2 * K
        S[x, FBWAIT] = 1


@njit(cache=True, inline="always")
def infect(S, x, src, P, M):
    S[x, FB] = 1
    S[x, TOKEN] = S[src, TOKEN]
    S[x, DONE] = 0
    if S[x, ROLE] == WORKER:
        start_fallback(S, x, S[x, TOKEN], P, M)


@njit(cache=True, inline="always")
def majority_broadcast(S, i, j):
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
    if S[v, ROLE] == WORKER and cv != EMPTY and cv != cu:
        S[u, FAIL] = 1
    else:
        S[v, COLOR] = cu
        S[v, LAST] = cu
        S[v, DONE] = 1


@njit(cache=True, inline="always")
def _main_leave(S, x, P, M):
    """Leave the current slot in the main schedule; returns False on a mode change."""
    K = P[P_K]
    s = S[x, SLOT]
    e = S[x, EPOCH]
    if s == 2 * K:
        if S[x, SYNC] == 0:
            if S[x, PHI] == K:
                S[x, SYNC] = 1
            else:
                M[P[P_EROW] + e, M_OOS_END] += 1
                M[P[P_EROW] + e, M_TRIG] += 1
                S[x, FB] = 1
                S[x, TOKEN] = e % 3
                # restore first, then cross the boundary as an active fallback worker
                start_fallback(S, x, e % 3, P, M)
                S[x, FBWAIT] = 0
                S[x, SLOT] = 0
                _entry(S, x, P[P_FROW], M)
                return False
        if e + 1 > P[P_EMAX]:
            S[x, FAIL] = 1
            return False
        e += 1
        S[x, EPOCH] = e
        S[x, SLOT] = 0
        S[x, R0 + e % 3] = S[x, COLOR]
        S[x, PINT] = 0
        _entry(S, x, e * K, M)
        return True
    p = s >> 1
    g = e * K + p
    if s & 1 == 0:
        M[g, M_LEFT] += 1
        if S[x, COLOR] == EMPTY:
            M[g, M_EMPTY] += 1
    else:
        if S[x, SYNC] == 1 and S[x, COLOR] != EMPTY and S[x, SPLIT] == 0:
            S[x, SYNC] = 0
            S[x, PHI] = p
            M[g, M_OOS] += 1
        S[x, SPLIT] = 0
        if S[x, PINT] < P[P_FEW]:
            M[g, M_FEW] += 1
    s += 1
    S[x, SLOT] = s
    if s == 2 * K:
        if S[x, SYNC] == 0:
            r = P[P_EROW] + e
            M[r, M_U] += 1 << (K - S[x, PHI])
            M[r, M_OOS_IN] += 1
    elif s & 1 == 0:
        S[x, PINT] = 0
        _entry(S, x, g + 1, M)
    return True


@njit(cache=True, inline="always")
def _fallback_leave(S, x, P, M):
    """Leave the current slot in the fallback schedule.

    Fallback phase ``p`` of a cycle uses slot ``2p`` for Cancellation and
    ``2p + 1`` for Splitting, like the main schedule. A colored node leaving
    Splitting unsplit carries a split debt (``PHI``) through the next slot and
    declares Done only if the debt is still unpaid when it leaves that slot.
    """
    K = P[P_K]
    s = S[x, SLOT]
    f = P[P_FROW] + S[x, FBCYC] * K + (s >> 1)
    if s == 2 * K:
        if S[x, FBWAIT]:
            S[x, FBWAIT] = 0
        else:
            if S[x, PHI]:
                S[x, DONE] = 1
                return False
            S[x, FBCYC] += 1
            if S[x, FBCYC] >= P[P_FBCAP]:
                S[x, FAIL] = 1
                return False
        S[x, SLOT] = 0
        _entry(S, x, P[P_FROW] + S[x, FBCYC] * K, M)
        return True
    if S[x, FBWAIT] == 0:
        if s & 1 == 0:
            if S[x, PHI]:
                S[x, DONE] = 1
                return False
            M[f, M_LEFT] += 1
            if S[x, COLOR] == EMPTY:
                M[f, M_EMPTY] += 1
        else:
            if S[x, SPLIT] == 0 and S[x, COLOR] != EMPTY:
                S[x, PHI] = 1
            S[x, SPLIT] = 0
    s += 1
    S[x, SLOT] = s
    if S[x, FBWAIT] == 0 and s < 2 * K and s & 1 == 0:
        _entry(S, x, f + 1, M)
    return True


@njit(cache=True, inline="always")
def move_worker(S, w, target, P, M):
    guard = 0
    while S[w, SLOT] != target and guard < 64:
        guard += 1
        if S[w, MODE] == MAIN:
            if not _main_leave(S, w, P, M):
                return
        else:
            if not _fallback_leave(S, w, P, M):
                return


@njit(cache=True, inline="always")
def is_ahead(target, cur, ns):
    d = (target - cur) % ns
    return d >= 1 and d <= ns // 2


@njit(cache=True, inline="always")
def worker_clock(S, w, c, P, M):
    m = S[w, MODE]
    if m == WARMUP or S[c, GATE] == 0:
        return
    target = P[P_TAB + S[c, GAMMA]]
    if m == WAITING:
        S[w, MODE] = MAIN
        S[w, EPOCH] = 0
        S[w, SLOT] = 0
        S[w, SYNC] = 1
        S[w, PHI] = 0
        S[w, SPLIT] = 0
        S[w, PINT] = 0
        col = S[w, COLOR]
        S[w, R0] = col
        S[w, R1] = col
        S[w, R2] = col
        _entry(S, w, 0, M)
        if target != 0:
            move_worker(S, w, target, P, M)
        return
    if is_ahead(target, S[w, SLOT], P[P_NS]):
        move_worker(S, w, target, P, M)


@njit(cache=True, inline="always")
def _cancel_or_split(S, i, j, s):
    ci = S[i, COLOR]
    cj = S[j, COLOR]
    if s & 1 == 0:
        if ci != EMPTY and cj != EMPTY and ci != cj:
            S[i, COLOR] = EMPTY
            S[j, COLOR] = EMPTY
    elif ci != EMPTY and cj == EMPTY and S[i, SPLIT] == 0:
        S[j, COLOR] = ci
        S[j, LAST] = ci
        S[i, SPLIT] = 1
        S[j, SPLIT] = 1
    elif cj != EMPTY and ci == EMPTY and S[j, SPLIT] == 0:
        S[i, COLOR] = cj
        S[i, LAST] = cj
        S[i, SPLIT] = 1
        S[j, SPLIT] = 1


@njit(cache=True, inline="always")
def main_pair(S, i, j, P):
    if S[i, EPOCH] != S[j, EPOCH] or S[i, SLOT] != S[j, SLOT]:
        return
    K = P[P_K]
    s = S[i, SLOT]
    yi = S[i, SYNC]
    yj = S[j, SYNC]
    if s == 2 * K:
        ci = S[i, COLOR]
        cj = S[j, COLOR]
        if yi == 0 and S[i, PHI] < K and ci != EMPTY and cj == EMPTY and yj == 1:
            u = i
            v = j
        elif yj == 0 and S[j, PHI] < K and cj != EMPTY and ci == EMPTY and yi == 1:
            u = j
            v = i
        else:
            return
        x = S[u, PHI]
        S[u, PHI] = x + 1
        S[v, COLOR] = S[u, COLOR]
        S[v, LAST] = S[u, COLOR]
        S[v, PHI] = x + 1
        S[v, SYNC] = 0
    elif yi == 1 and yj == 1:
        _cancel_or_split(S, i, j, s)


@njit(cache=True, inline="always")
def _pay_debt(S, u, v):
    c = S[u, COLOR]
    S[v, COLOR] = c
    S[v, LAST] = c
    S[u, PHI] = 0
    if S[v, SLOT] & 1:
        # the copy stands in for this phase's split
        S[v, SPLIT] = 1


@njit(cache=True, inline="always")
def fallback_pair(S, i, j, P):
    if S[i, FBWAIT] or S[j, FBWAIT]:
        return
    if S[i, FBCYC] != S[j, FBCYC]:
        return
    si = S[i, SLOT]
    sj = S[j, SLOT]
    di = S[i, PHI]
    dj = S[j, PHI]
    if di or dj:
        # a node owing a split neither cancels nor splits until it pays
        if abs(si - sj) <= 1 and di != dj:
            if di and S[j, COLOR] == EMPTY:
                _pay_debt(S, i, j)
            elif dj and S[i, COLOR] == EMPTY:
                _pay_debt(S, j, i)
        return
    if si == sj and si < 2 * P[P_K]:
        _cancel_or_split(S, i, j, si)


@njit(cache=True, inline="always")
def _warm_finished(S, x):
    if S[x, PH] >= 2:
        S[x, MODE] = WAITING


@njit(cache=True, inline="always")
def worker_pair(S, i, j, P, M):
    mi = S[i, MODE]
    mj = S[j, MODE]
    if mi == WARMUP and mj == WARMUP:
        two_core(S, i, j, P[P_LW], 3, M[P[P_WROW]:])
        _warm_finished(S, i)
        _warm_finished(S, j)
        return
    if mi == WARMUP or mj == WARMUP:
        # the finished worker counts as sitting in Cancellation of phase 2
        u = i if mi == WARMUP else j
        v = j if mi == WARMUP else i
        if S[u, PH] == 1 and S[u, STG] == BUF2:
            S[u, PH] = 2
            S[u, MODE] = WAITING
        else:
            S[u, FAIL] = 1
            S[v, FAIL] = 1
        return
    if mi == MAIN and mj == MAIN:
        S[i, PINT] += 1
        S[j, PINT] += 1
        main_pair(S, i, j, P)
    elif mi == FALLBACK and mj == FALLBACK:
        fallback_pair(S, i, j, P)
    else:
        if mi == MAIN:
            S[i, PINT] += 1
        if mj == MAIN:
            S[j, PINT] += 1


@njit(cache=True)
def th_kernel(S, i, j, P, M):
    amb_step(S, i, j)
    if S[i, FAIL] or S[j, FAIL]:
        S[i, FAIL] = 1
        S[j, FAIL] = 1
        return
    if S[i, ROLE] == FRESH or S[j, ROLE] == FRESH:
        assign_roles(S, i, j, M, P)
        return
    fi = S[i, FB]
    fj = S[j, FB]
    if fi != fj:
        if fi:
            infect(S, j, i, P, M)
        else:
            infect(S, i, j, P, M)
        return
    if S[i, DONE] or S[j, DONE]:
        majority_broadcast(S, i, j)
        return
    ri = S[i, ROLE]
    rj = S[j, ROLE]
    if ri == WORKER:
        if rj == WORKER:
            worker_pair(S, i, j, P, M)
        else:
            worker_clock(S, i, j, P, M)
            if S[i, MODE] == MAIN:
                S[i, PINT] += 1
    elif rj == WORKER:
        worker_clock(S, j, i, P, M)
        if S[j, MODE] == MAIN:
            S[j, PINT] += 1
    elif ri != rj:
        tick_clocks(S, i, j, P)


@njit(cache=True)
def th_stable(S, P):
    f = fail_state(S)
    if f == 2:
        return STABLE if amb_column_stable(S) else ALL_FAILED
    if f == 1:
        return NOT_STABLE
    c = S[0, COLOR]
    fb = S[0, FB]
    for k in range(S.shape[0]):
        if S[k, DONE] == 0 or S[k, COLOR] != c or S[k, FB] != fb:
            return NOT_STABLE
    return STABLE


# ---------------------------------------------------------------- protocol

class ThreeHalvesProtocol(ProtocolBase):
    name = "three-halves"
    kernel = staticmethod(th_kernel)
    stable = staticmethod(th_stable)

    def __init__(self, n: int, black_count: int, params: Optional[ThreeHalvesParams] = None,
                 **constants):
        super().__init__(n, black_count)
        self.tp = params if params is not None else ThreeHalvesParams.build(n, **constants)
        tp = self.tp
        self.rows_phase = tp.K * (tp.emax + 1)
        erow = self.rows_phase
        frow = erow + tp.emax + 1
        wrow = frow + tp.fallback_phases
        self.rows_total = wrow + 3
        few = max(1, math.ceil(tp.L_p / 4))
        head = [tp.K, tp.L_p, tp.L_c, tp.T_epoch, tp.t_warm, tp.L_w, tp.slots, tp.emax,
                tp.fallback_cycles, few, erow, frow, wrow]
        self.params = np.concatenate([np.array(head, np.int64), tp.slot_table()])

    def initial_states(self):
        S = self._init_common(N_FIELDS)
        S[:, SYNC] = 1
        return S

    def new_metrics(self):
        return np.zeros((self.rows_total, 6), np.int64)

    def default_max_interactions(self):
        tp = self.tp
        ticks = tp.t_warm + (tp.emax + 2 + tp.fallback_cycles) * tp.T_epoch
        # one tick per clock costs at most 60 parallel time units when n/30 clocks exist
        main = 60 * ticks * self.n
        warm = 8 * tp.L_w * self.n
        return main + warm + ambassador_allowance(self.n)

    def outputs(self, S):
        out = np.where(S[:, COLOR] != EMPTY, S[:, COLOR], S[:, LAST])
        return np.where(S[:, FAIL] == 1, amb_opinion(S[:, AMB]), out)

    def flags(self, S, M):
        return bool(S[:, FB].any()), bool(S[:, FAIL].any())

    def workers(self, S) -> int:
        return int(np.sum(S[:, ROLE] == WORKER))

    def phase_log(self, S, M):
        """Warmup phases first, then main phases; indices continue across."""
        nw = max(1, self.workers(S))
        wrow = int(self.params[P_WROW])
        warm = phase_records(M[wrow:wrow + 2, :4], nw)
        main = phase_records(M[:self.rows_phase, :4], nw, oos=M[:self.rows_phase, M_OOS])
        for r in main:
            r.phase_index += 2
        return warm + main

    def result(self, S, M, seed, count, timed_out, correct):
        res = super().result(S, M, seed, count, timed_out, correct)
        nw = max(1, self.workers(S))
        res.critical_phase_index = critical_phase(res.phase_log, nw)
        crit = res.critical_phase_index
        fracs = [r.empty_fraction_after_cancel for r in res.phase_log
                 if (crit is None or r.phase_index < crit) and r.empty_fraction_after_cancel >= 0]
        res.empty_frac_min = min(fracs) if fracs else None
        return res

    def extras(self, S, M):
        erow = int(self.params[P_EROW])
        frow = int(self.params[P_FROW])
        E = M[erow:frow]
        roles = np.bincount(S[:, ROLE], minlength=4)
        return {
            "K": self.tp.K,
            "workers": int(roles[WORKER]),
            "left_clocks": int(roles[LEFT]),
            "right_clocks": int(roles[RIGHT]),
            "fresh": int(roles[FRESH]),
            "U": E[:, M_U].tolist(),
            "oos_at_catchup_start": E[:, M_OOS_IN].tolist(),
            "oos_at_epoch_end": E[:, M_OOS_END].tolist(),
            "few_interactions": M[:self.rows_phase, M_FEW].tolist(),
            "fallback_phases": phase_records(M[frow:frow + self.tp.fallback_phases, :4],
                                             max(1, int(roles[WORKER]))),
        }


def role_census(S: np.ndarray) -> dict:
    roles = np.bincount(S[:, ROLE], minlength=4)
    return {"fresh": int(roles[FRESH]), "workers": int(roles[WORKER]),
            "left": int(roles[LEFT]), "right": int(roles[RIGHT])}


def clock_progress(S: np.ndarray, params: ThreeHalvesParams) -> np.ndarray:
    """Unwrapped clock counters (ticks since creation) of all clocks."""
    clocks = (S[:, ROLE] == LEFT) | (S[:, ROLE] == RIGHT)
    g = S[clocks, GAMMA]
    w = S[clocks, WRAPS]
    return np.where(w == 0, g, params.t_warm + (w - 1) * params.T_epoch + g)


# ------------------------------------------------------------ pure interface

_FIELD_NAMES = ["color", "amb", "fail", "done", "last", "phase", "stage", "step", "split",
                "role", "mode", "gamma", "gate", "wraps", "slot", "epoch", "sync", "phi",
                "r0", "r1", "r2", "fb", "token", "fbwait", "fbcyc", "pint"]


@dataclass(frozen=True)
class NodeState:
    """Flat view of one agent; unused fields stay at their defaults."""

    color: int = EMPTY
    amb: int = 0
    fail: int = 0
    done: int = 0
    last: int = EMPTY
    phase: int = 0
    stage: int = 0
    step: int = 0
    split: int = 0
    role: int = FRESH
    mode: int = WARMUP
    gamma: int = 0
    gate: int = 0
    wraps: int = 0
    slot: int = 0
    epoch: int = 0
    sync: int = 1
    phi: int = 0  # catch-up phase counter; split debt in fallback mode
    r0: int = EMPTY
    r1: int = EMPTY
    r2: int = EMPTY
    fb: int = 0
    token: int = 0
    fbwait: int = 0
    fbcyc: int = 0
    pint: int = 0

    @classmethod
    def fresh(cls, color: int) -> "NodeState":
        return cls(color=color, last=color, amb=0 if color == BLACK else 1)

    @classmethod
    def clock(cls, side: int, gamma: int = 0, gate: bool = False) -> "NodeState":
        return cls(role=side, gamma=gamma, gate=int(gate), amb=2)

    @classmethod
    def worker(cls, color: int, mode: int = WARMUP, **kw) -> "NodeState":
        return cls(role=WORKER, color=color, last=color if color != EMPTY else BLACK,
                   mode=mode, amb=2, **kw)

    @property
    def ambassador(self) -> AmbassadorState:
        return AmbassadorState.from_code(self.amb)

    @property
    def broadcasting(self) -> bool:
        return bool(self.done)

    def row(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in _FIELD_NAMES], np.int64)

    @classmethod
    def from_row(cls, r) -> "NodeState":
        return cls(**{f: int(v) for f, v in zip(_FIELD_NAMES, r)})


assert len(_FIELD_NAMES) == N_FIELDS


def _apply(u: NodeState, v: NodeState, params: ThreeHalvesParams):
    p = ThreeHalvesProtocol(max(params.n, 4), 1, params=params)
    S = np.stack([u.row(), v.row()])
    M = p.new_metrics()
    th_kernel(S, 0, 1, p.params, M)
    return NodeState.from_row(S[0]), NodeState.from_row(S[1])


def transition(u: NodeState, v: NodeState, params: ThreeHalvesParams):
    """One interaction of the full protocol."""
    return _apply(u, v, params)


def initial_interaction(u: NodeState, v: NodeState, params: ThreeHalvesParams):
    if u.role != FRESH:
        raise ValueError("u must be fresh")
    return _apply(u, v, params)


def clock_tick(u: NodeState, v: NodeState, params: ThreeHalvesParams):
    if u.role not in (LEFT, RIGHT) or v.role not in (LEFT, RIGHT):
        raise ValueError("both parties must be clocks")
    return _apply(u, v, params)


def worker_clock_interaction(w: NodeState, c: NodeState, params: ThreeHalvesParams):
    if w.role != WORKER or c.role not in (LEFT, RIGHT):
        raise ValueError("need a worker and a clock")
    return _apply(w, c, params)


def warmup_transition(u: NodeState, v: NodeState, params: ThreeHalvesParams):
    if WARMUP not in (u.mode, v.mode):
        raise ValueError("one party must be in warmup")
    return _apply(u, v, params)


def threehalves_output(u: NodeState) -> int:
    if u.fail:
        return u.ambassador.opinion
    if u.done or u.color != EMPTY:
        return u.color
    return u.last
