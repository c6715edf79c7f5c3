"""Epoch protocol: buffer-free phases grouped into epochs with catch-up phases.

A phase has a cancellation and a splitting slot of ``L_p`` counted
interactions; ``K`` phases plus a catch-up slot of ``L_c`` make an epoch. A
synchronised colored node that leaves a splitting slot without splitting goes
out of sync and owes ``val = 2**(K - phi)`` copies of its color, paid back by
special splits in the catch-up slot. A node still out of sync when its catch-up
ends starts a fallback broadcast; every node then restarts the 2-protocol from
the colors it held at the start of the previous epoch.

Counters advance either for both parties (``BOTH``) or only for the party
with the smaller counter (``MIN``; ties go to the initiator of an ordered
pair).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit

from .classic import (DEFAULT_C_LEN, N_FIELDS as N_TWO, PH, SPLIT, STEP, STG, ambassador_allowance,
                      color_outputs, fail_state, phase_cap, phase_records, stage_length, two_core)
from .primitives import (AMB, BLACK, COLOR, DONE, EMPTY, FAIL, LAST, WHITE, AmbassadorState,
                         ProtocolBase, amb_column_stable, amb_step)
from .sim import ALL_FAILED, NOT_STABLE, STABLE, PairMode

EP, SLOT, ESTEP, SYNC, PHI, R0, R1, R2, FB, TOKEN = range(N_TWO, N_TWO + 10)
N_FIELDS = N_TWO + 10

# parameter vector layout
P_K, P_EMAX, P_LP, P_LC, P_MIN, P_L2, P_CAP2, P_EROW, P_FROW = range(9)

# per-phase metric columns
M_BLACK, M_WHITE, M_LEFT, M_EMPTY, M_OOS = range(5)
# per-epoch metric columns
M_U, M_OOS_IN, M_OOS_END, M_TRIG = range(4)

DEFAULT_C_LEN_EPOCH = 6.0
DEFAULT_C_CATCH = 8.0


class Strategy(enum.IntEnum):
    BOTH = 0
    MIN = 1


def val(phi: int, K: int) -> int:
    if not 0 <= phi <= K:
        raise ValueError("phi must lie in [0, K]")
    return 1 << (K - phi)


def counter_update(strategy: Strategy, cu: int, cv: int) -> tuple[int, int]:
    """Counter rule on plain integers; ``cu`` is the initiator's counter."""
    if strategy is Strategy.BOTH:
        return cu + 1, cv + 1
    if cu <= cv:
        return cu + 1, cv
    return cu, cv + 1


@dataclass(frozen=True)
class EpochParams:
    n: int
    a: Fraction
    K: int
    E: int
    L_p: int
    L_c: int
    strategy: Strategy

    @classmethod
    def build(cls, n: int, a=Fraction(1, 3), strategy: Strategy = Strategy.BOTH,
              c_len: float = DEFAULT_C_LEN_EPOCH, c_catch: float = DEFAULT_C_CATCH) -> "EpochParams":
        a = Fraction(a).limit_denominator(1000)
        if not 0 < a < 1:
            raise ValueError("a must lie in (0, 1)")
        lg = math.log2(n)
        K = max(1, math.ceil(lg ** float(a) - 1e-9))
        E = max(1, math.ceil(lg ** float(1 - a) - 1e-9))
        while K * E < math.ceil(lg):
            E += 1
        L_p = max(1, math.ceil(c_len * lg ** float(1 - a)))
        L_c = max(1, math.ceil(c_catch * lg))
        return cls(n, a, K, E, L_p, L_c, Strategy(strategy))

    @property
    def slots(self) -> int:
        return 2 * self.K + 1

    @property
    def epoch_length(self) -> int:
        return 2 * self.K * self.L_p + self.L_c


# ------------------------------------------------------------------ kernel

@njit(cache=True, inline="always")
def record_entry(S, x, row, M):
    c = S[x, COLOR]
    if c == BLACK:
        M[row, M_BLACK] += 1
    elif c == WHITE:
        M[row, M_WHITE] += 1


@njit(cache=True, inline="always")
def start_fallback(S, x, token, P, M, src):
    """Restart ``x`` on the 2-protocol from its snapshot two epochs back.

    A node reached by the fallback broadcast from ``src`` takes over the
    sender's step while the sender is still in its first Cancellation stage,
    so late receivers do not trail the restart by a whole stage.
    """
    c = S[x, R0 + (token + 2) % 3]
    S[x, COLOR] = c
    if c != EMPTY:
        S[x, LAST] = c
    S[x, FB] = 1
    S[x, TOKEN] = token
    S[x, PH] = 0
    S[x, STG] = 0
    S[x, STEP] = 0
    if src >= 0 and S[src, PH] == 0 and S[src, STG] == 0 and S[src, DONE] == 0:
        S[x, STEP] = S[src, STEP]
    S[x, SPLIT] = 0
    S[x, DONE] = 0
    record_entry(S, x, P[P_FROW], M)


@njit(cache=True, inline="always")
def end_epoch(S, x, P, M):
    K = P[P_K]
    e = S[x, EP]
    if S[x, SYNC] == 0:
        if S[x, PHI] == K:
            S[x, SYNC] = 1
        else:
            M[P[P_EROW] + e, M_OOS_END] += 1
            M[P[P_EROW] + e, M_TRIG] += 1
            start_fallback(S, x, e % 3, P, M, -1)
            return
    if e + 1 > P[P_EMAX]:
        S[x, FAIL] = 1
        return
    S[x, EP] = e + 1
    S[x, SLOT] = 0
    S[x, ESTEP] = 0
    S[x, R0 + (e + 1) % 3] = S[x, COLOR]
    record_entry(S, x, (e + 1) * K, M)


@njit(cache=True, inline="always")
def leave_slot(S, x, P, M):
    K = P[P_K]
    s = S[x, SLOT]
    if s == 2 * K:
        end_epoch(S, x, P, M)
        return
    e = S[x, EP]
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
    s += 1
    S[x, SLOT] = s
    if s == 2 * K:
        if S[x, SYNC] == 0:
            r = P[P_EROW] + e
            M[r, M_U] += 1 << (K - S[x, PHI])
            M[r, M_OOS_IN] += 1
    elif s & 1 == 0:
        record_entry(S, x, g + 1, M)


@njit(cache=True, inline="always")
def tick(S, x, P, M):
    t = S[x, ESTEP] + 1
    length = P[P_LC] if S[x, SLOT] == 2 * P[P_K] else P[P_LP]
    if t < length:
        S[x, ESTEP] = t
        return
    S[x, ESTEP] = 0
    leave_slot(S, x, P, M)


@njit(cache=True, inline="always")
def special_split(S, u, v, K):
    x = S[u, PHI]
    S[u, PHI] = x + 1
    c = S[u, COLOR]
    S[v, COLOR] = c
    S[v, LAST] = c
    S[v, PHI] = x + 1
    S[v, SYNC] = 0


@njit(cache=True, inline="always")
def epoch_core(S, i, j, P, M):
    K = P[P_K]
    catch = 2 * K
    ei = S[i, EP]
    ej = S[j, EP]
    si = S[i, SLOT]
    sj = S[j, SLOT]
    if ei == ej and si == sj:
        ci = S[i, COLOR]
        cj = S[j, COLOR]
        yi = S[i, SYNC]
        yj = S[j, SYNC]
        if si == catch:
            if yi == 0 and S[i, PHI] < K and ci != EMPTY and cj == EMPTY and yj == 1:
                special_split(S, i, j, K)
            elif yj == 0 and S[j, PHI] < K and cj != EMPTY and ci == EMPTY and yi == 1:
                special_split(S, j, i, K)
        elif yi == 1 and yj == 1:
            if si & 1 == 0:
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
    pull_i = si == catch and ej == ei + 1 and sj == 0
    pull_j = sj == catch and ei == ej + 1 and si == 0
    if P[P_MIN] == 0:
        inc_i = not pull_i
        inc_j = not pull_j
    else:
        ti = S[i, ESTEP]
        tj = S[j, ESTEP]
        if ei != ej:
            i_first = ei < ej
        elif si != sj:
            i_first = si < sj
        else:
            i_first = ti <= tj
        inc_i = i_first and not pull_i
        inc_j = (not i_first) and not pull_j
    if pull_i:
        leave_slot(S, i, P, M)
        S[i, ESTEP] = 0
    elif inc_i:
        tick(S, i, P, M)
    if pull_j:
        leave_slot(S, j, P, M)
        S[j, ESTEP] = 0
    elif inc_j:
        tick(S, j, P, M)


@njit(cache=True)
def epoch_kernel(S, i, j, P, M):
    amb_step(S, i, j)
    if S[i, FAIL] or S[j, FAIL]:
        S[i, FAIL] = 1
        S[j, FAIL] = 1
        return
    fi = S[i, FB]
    fj = S[j, FB]
    if fi and fj:
        two_core(S, i, j, P[P_L2], P[P_CAP2], M[P[P_FROW]:])
    elif fi:
        start_fallback(S, j, S[i, TOKEN], P, M, i)
    elif fj:
        start_fallback(S, i, S[j, TOKEN], P, M, j)
    else:
        epoch_core(S, i, j, P, M)


@njit(cache=True)
def epoch_stable(S, P):
    f = fail_state(S)
    if f == 2:
        return STABLE if amb_column_stable(S) else ALL_FAILED
    if f == 1:
        return NOT_STABLE
    c = S[0, COLOR]
    for k in range(S.shape[0]):
        if S[k, FB] == 0 or S[k, DONE] == 0 or S[k, COLOR] != c:
            return NOT_STABLE
    return STABLE


# ---------------------------------------------------------------- protocol

class EpochProtocol(ProtocolBase):
    """Epoch protocol; ``strategy=MIN`` runs on ordered pairs."""

    kernel = staticmethod(epoch_kernel)
    stable = staticmethod(epoch_stable)

    def __init__(self, n: int, black_count: int, a=Fraction(1, 3),
                 strategy: Strategy = Strategy.BOTH, c_len: float = DEFAULT_C_LEN_EPOCH,
                 c_catch: float = DEFAULT_C_CATCH, c_len2: float = DEFAULT_C_LEN,
                 grace_epochs: int = 1):
        super().__init__(n, black_count)
        self.ep = EpochParams.build(n, a, strategy, c_len, c_catch)
        self.name = "epoch-min" if self.ep.strategy is Strategy.MIN else "epoch"
        self.pair_mode = PairMode.ORDERED if self.ep.strategy is Strategy.MIN else PairMode.UNORDERED
        self.emax = self.ep.E - 1 + grace_epochs
        self.L2 = stage_length(n, c_len2)
        self.cap2 = phase_cap(n)
        ep = self.ep
        self.rows_phase = ep.K * (self.emax + 1)
        erow = self.rows_phase
        frow = erow + self.emax + 1
        self.params = np.array([ep.K, self.emax, ep.L_p, ep.L_c, int(ep.strategy), self.L2,
                                self.cap2, erow, frow], np.int64)

    def initial_states(self):
        S = self._init_common(N_FIELDS)
        S[:, SYNC] = 1
        for r in (R0, R1, R2):
            S[:, r] = S[:, COLOR]
        return S

    def new_metrics(self):
        return np.zeros((int(self.params[P_FROW]) + self.cap2 + 1, 5), np.int64)

    def on_start(self, S, M):
        M[0, M_BLACK] = int(np.sum(S[:, COLOR] == BLACK))
        M[0, M_WHITE] = int(np.sum(S[:, COLOR] == WHITE))

    def default_max_interactions(self):
        n = self.n
        rate = 1 if self.ep.strategy is Strategy.MIN else 2
        main = 3 * (self.emax + 1) * self.ep.epoch_length * n // rate
        fallback = 4 * self.L2 * (self.cap2 + 1) * n
        return main + fallback + ambassador_allowance(n)

    def outputs(self, S):
        return color_outputs(S)

    def flags(self, S, M):
        return bool(S[:, FB].any()), bool(S[:, FAIL].any())

    def phase_log(self, S, M):
        return phase_records(M[:self.rows_phase, :4], self.n, oos=M[:self.rows_phase, M_OOS])

    def extras(self, S, M):
        erow = int(self.params[P_EROW])
        frow = int(self.params[P_FROW])
        E = M[erow:frow]
        return {
            "K": self.ep.K,
            "U": E[:, M_U].tolist(),
            "oos_at_catchup_start": E[:, M_OOS_IN].tolist(),
            "oos_at_epoch_end": E[:, M_OOS_END].tolist(),
            "fallback_phases": phase_records(M[frow:, :4], self.n),
        }


# ------------------------------------------------------------ pure interface

@dataclass(frozen=True)
class EpochState:
    color: int = EMPTY
    sync: bool = True
    phi: int = 0
    epoch: int = 0
    slot: int = 0
    step: int = 0
    split_used: bool = False
    ring: tuple = (EMPTY, EMPTY, EMPTY)
    done: bool = False
    fail: bool = False
    fallback: bool = False
    token: int = 0
    ambassador: AmbassadorState = AmbassadorState(BLACK, True)
    last: int = EMPTY

    @property
    def backup1(self) -> int:
        """Color held at the start of the current epoch."""
        return self.ring[self.epoch % 3]

    @property
    def backup2(self) -> int:
        """Color held at the start of the previous epoch."""
        return self.ring[(self.epoch - 1) % 3]

    def row(self) -> np.ndarray:
        r = np.zeros(N_FIELDS, np.int64)
        r[COLOR] = self.color
        r[AMB] = self.ambassador.code
        r[FAIL] = int(self.fail)
        r[DONE] = int(self.done)
        r[LAST] = self.last if self.last != EMPTY else self.color
        r[SPLIT] = int(self.split_used)
        r[EP] = self.epoch
        r[SLOT] = self.slot
        r[ESTEP] = self.step
        r[SYNC] = int(self.sync)
        r[PHI] = self.phi
        r[R0:R2 + 1] = self.ring
        r[FB] = int(self.fallback)
        r[TOKEN] = self.token
        return r

    @classmethod
    def from_row(cls, r) -> "EpochState":
        return cls(color=int(r[COLOR]), sync=bool(r[SYNC]), phi=int(r[PHI]), epoch=int(r[EP]),
                   slot=int(r[SLOT]), step=int(r[ESTEP]), split_used=bool(r[SPLIT]),
                   ring=tuple(int(x) for x in r[R0:R2 + 1]), done=bool(r[DONE]),
                   fail=bool(r[FAIL]), fallback=bool(r[FB]), token=int(r[TOKEN]),
                   ambassador=AmbassadorState.from_code(int(r[AMB])), last=int(r[LAST]))

    @classmethod
    def with_backups(cls, epoch: int, backup1: int, backup2: int, **kw) -> "EpochState":
        ring = [EMPTY] * 3
        ring[epoch % 3] = backup1
        ring[(epoch - 1) % 3] = backup2
        return cls(epoch=epoch, ring=tuple(ring), **kw)


def _proto_for(params: EpochParams, emax: int | None = None) -> EpochProtocol:
    n = max(params.n, 4)
    p = EpochProtocol.__new__(EpochProtocol)
    ProtocolBase.__init__(p, n, n)
    p.ep = params
    p.emax = params.E if emax is None else emax
    p.L2 = stage_length(n)
    p.cap2 = phase_cap(n)
    p.rows_phase = params.K * (p.emax + 1)
    erow = p.rows_phase
    frow = erow + p.emax + 1
    p.params = np.array([params.K, p.emax, params.L_p, params.L_c, int(params.strategy), p.L2,
                         p.cap2, erow, frow], np.int64)
    return p


def epoch_transition(u: EpochState, v: EpochState, params: EpochParams):
    """Apply one interaction; ``u`` is the initiator."""
    p = _proto_for(params, emax=max(params.E, u.epoch + 1, v.epoch + 1))
    S = np.stack([u.row(), v.row()])
    M = p.new_metrics()
    epoch_kernel(S, 0, 1, p.params, M)
    return EpochState.from_row(S[0]), EpochState.from_row(S[1])


def catchup_split(u: EpochState, v: EpochState, K: int):
    """Special split on its own; a no-op unless the preconditions hold."""
    if u.sync or u.phi >= K or u.color == EMPTY or v.color != EMPTY or not v.sync:
        return u, v
    x = u.phi
    from dataclasses import replace
    return (replace(u, phi=x + 1),
            replace(v, color=u.color, last=u.color, phi=x + 1, sync=False))
