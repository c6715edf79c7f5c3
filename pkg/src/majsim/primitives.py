"""Background primitives: one-shot broadcast and the 4-state ambassador protocol.

Colors are small integers (``EMPTY``, ``BLACK``, ``WHITE``). Every protocol's
state array starts with the columns listed below so the ambassador and fail
machinery can be shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .sim import ALL_FAILED, NOT_STABLE, STABLE, PairMode, RunResult, default_max_interactions, make_rng, parallel_time

EMPTY, BLACK, WHITE = 0, 1, 2

# Ambassador codes: strong black, strong white, weak black, weak white.
AMB_B, AMB_W, AMB_b, AMB_w = 0, 1, 2, 3

# Shared columns.
COLOR, AMB, FAIL, DONE, LAST = 0, 1, 2, 3, 4
N_COMMON = 5


def opposite(c: int) -> int:
    return WHITE if c == BLACK else BLACK if c == WHITE else EMPTY


# ---------------------------------------------------------------- broadcast

@dataclass(frozen=True)
class BroadcastState:
    informed: bool = False
    payload: Optional[int] = None


def broadcast_step(u: BroadcastState, v: BroadcastState):
    """One interaction of a one-shot broadcast. Returns ``(u', v', conflict)``."""
    if u.informed and v.informed:
        return u, v, u.payload != v.payload
    if u.informed:
        return u, BroadcastState(True, u.payload), False
    if v.informed:
        return BroadcastState(True, v.payload), v, False
    return u, v, False


@njit(cache=True)
def _broadcast_kernel(S, i, j, P, M):
    if S[i] or S[j]:
        S[i] = 1
        S[j] = 1


@njit(cache=True)
def _broadcast_done(S, P):
    for k in range(S.shape[0]):
        if S[k] == 0:
            return NOT_STABLE
    return STABLE


def broadcast_time(n: int, seed: int) -> int:
    """Interactions until a broadcast from one agent reaches everybody."""
    from .sim import drive

    S = np.zeros(n, np.int64)
    S[0] = 1
    rng = make_rng(seed)
    dummy = np.zeros(1, np.int64)
    count, _ = drive(_broadcast_kernel, _broadcast_done, S, dummy, dummy, rng.state,
                     False, 0, 1, 1, 1 << 62)
    return count


# --------------------------------------------------------------- ambassador

@dataclass(frozen=True)
class AmbassadorState:
    opinion: int  # BLACK or WHITE
    strong: bool

    @property
    def code(self) -> int:
        return (0 if self.strong else 2) + (0 if self.opinion == BLACK else 1)

    @classmethod
    def from_code(cls, code: int) -> "AmbassadorState":
        return cls(BLACK if code % 2 == 0 else WHITE, code < 2)


@njit(cache=True, inline="always")
def amb_rule(a, b):
    """Ambassador transition on codes; returns the new pair."""
    if (a == AMB_B and b == AMB_W) or (a == AMB_W and b == AMB_B):
        return a + 2, b + 2
    if a == AMB_B and b == AMB_w:
        return a, AMB_b
    if a == AMB_W and b == AMB_b:
        return a, AMB_w
    if b == AMB_B and a == AMB_w:
        return AMB_b, b
    if b == AMB_W and a == AMB_b:
        return AMB_w, b
    return a, b


@njit(cache=True, inline="always")
def amb_step(S, i, j):
    a, b = amb_rule(S[i, AMB], S[j, AMB])
    S[i, AMB] = a
    S[j, AMB] = b


def ambassador_step(u: AmbassadorState, v: AmbassadorState):
    a, b = amb_rule(u.code, v.code)
    return AmbassadorState.from_code(a), AmbassadorState.from_code(b)


def amb_opinion(code):
    return np.where(np.asarray(code) % 2 == 0, BLACK, WHITE)


def _counts_stable(nB, nW, nb, nw) -> bool:
    if nB > 0 and nW > 0:
        return False
    if nB > 0:
        return nw == 0
    if nW > 0:
        return nb == 0
    return nb == 0 or nw == 0


def ambassador_stable(states: Sequence[AmbassadorState]) -> bool:
    codes = np.array([s.code for s in states])
    return _counts_stable(*(int(np.sum(codes == c)) for c in range(4)))


@njit(cache=True)
def amb_column_stable(S):
    nB = 0
    nW = 0
    nb = 0
    nw = 0
    for k in range(S.shape[0]):
        a = S[k, AMB]
        if a == AMB_B:
            nB += 1
        elif a == AMB_W:
            nW += 1
        elif a == AMB_b:
            nb += 1
        else:
            nw += 1
    if nB > 0 and nW > 0:
        return False
    if nB > 0:
        return nw == 0
    if nW > 0:
        return nb == 0
    return nb == 0 or nw == 0


@njit(cache=True)
def _amb_count_events(cnt, n, unif, count, limit):
    """Advance ambassador counts event by event.

    ``cnt`` holds (B, W, b, w) and is updated in place. Null interactions are
    skipped with geometric jumps. Returns ``(count, used, done)``; ``count`` is
    the interaction index of the last productive event.
    """
    total = n * (n - 1) / 2.0
    k = 0
    m = unif.shape[0]
    while k + 1 < m:
        B = cnt[0]
        W = cnt[1]
        b = cnt[2]
        w = cnt[3]
        r1 = B * W
        r2 = B * w
        r3 = W * b
        prod = r1 + r2 + r3
        if prod == 0:
            return count, k, True
        p = prod / total
        u = unif[k]
        if p >= 1.0:
            skip = 1
        else:
            skip = int(math.floor(math.log(u) / math.log1p(-p))) + 1
        if count + skip > limit:
            return limit, k, False
        count += skip
        x = unif[k + 1] * prod
        k += 2
        if x < r1:
            cnt[0] -= 1
            cnt[1] -= 1
            cnt[2] += 1
            cnt[3] += 1
        elif x < r1 + r2:
            cnt[3] -= 1
            cnt[2] += 1
        else:
            cnt[2] -= 1
            cnt[3] += 1
    return count, k, False


def ambassador_counts_run(cnt: np.ndarray, n: int, rng,
                          start: int, limit: int) -> Optional[int]:
    """Run the ambassador dynamics on counts from interaction ``start``.

    Returns the interaction index at which the configuration becomes stable
    (``start`` if it already is), or ``None`` if ``limit`` is hit first.
    """
    count = start
    while True:
        unif = 1.0 - rng.random(2 * 8192)  # in (0, 1]
        count, used, done = _amb_count_events(cnt, n, unif, count, limit)
        if done:
            return count
        if count >= limit:
            return None


def round_up_to_check(t: int, start: int, cadence: int) -> int:
    """First check point ``start + k*cadence`` that is at or after ``t``."""
    if t <= start:
        return start
    return start + -(-(t - start) // cadence) * cadence


def settle_amb_column(S: np.ndarray, cnt: np.ndarray) -> None:
    """Write final ambassador counts back onto agents.

    Counts are exact; which agents carry the surviving strong states is
    assigned canonically (agents already strong keep that first).
    """
    col = S[:, AMB]
    order = np.argsort(col >= 2, kind="stable")
    new = np.empty_like(col)
    pos = 0
    for code in range(4):
        new[order[pos:pos + cnt[code]]] = code
        pos += cnt[code]
    S[:, AMB] = new


class ProtocolBase:
    """Shared plumbing for protocols whose agents carry the common columns."""

    name = "base"
    pair_mode = PairMode.UNORDERED

    def __init__(self, n: int, black_count: int):
        if n < 2:
            raise ValueError("need at least two agents")
        if not 0 <= black_count <= n:
            raise ValueError("black_count out of range")
        if 2 * black_count == n:
            raise ValueError("inputs must have a strict majority")
        self.n = n
        self.black_count = black_count

    # hooks -----------------------------------------------------------
    def initial_states(self) -> np.ndarray:
        raise NotImplementedError

    def new_metrics(self) -> np.ndarray:
        return np.zeros(1, np.int64)

    def on_start(self, S, M) -> None:
        pass

    def default_max_interactions(self) -> int:
        return default_max_interactions(self.n)

    def outputs(self, S: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def flags(self, S, M) -> tuple[bool, bool]:
        return False, bool(S[:, FAIL].any())

    def phase_log(self, S, M) -> list:
        return []

    def extras(self, S, M) -> dict:
        return {}

    # ----------------------------------------------------------------
    def _init_common(self, F: int) -> np.ndarray:
        S = np.zeros((self.n, F), np.int64)
        b = self.black_count
        S[:b, COLOR] = BLACK
        S[b:, COLOR] = WHITE
        S[:b, AMB] = AMB_B
        S[b:, AMB] = AMB_W
        S[:, LAST] = S[:, COLOR]
        return S

    def finish_with_ambassador(self, S, rng, start, cadence, limit):
        """Complete a run once every agent has failed.

        From then on only the ambassador fields change, so the remainder is
        simulated exactly on counts.
        """
        cnt = np.bincount(S[:, AMB], minlength=4).astype(np.int64)
        t = ambassador_counts_run(cnt, self.n, rng, start, limit)
        if t is None:
            return None
        settle_amb_column(S, cnt)
        end = round_up_to_check(t, start, cadence)
        return end if end <= limit else None

    def result(self, S, M, seed, count, timed_out, correct) -> RunResult:
        from .sim import critical_phase

        fb, amb = self.flags(S, M)
        log = self.phase_log(S, M)
        crit = critical_phase(log, self.n)
        pre = [r for r in log if crit is None or r.phase_index < crit]
        fracs = [r.empty_fraction_after_cancel for r in pre if r.empty_fraction_after_cancel >= 0]
        return RunResult(
            protocol=self.name, n=self.n, black_count=self.black_count, seed=seed,
            stabilization_interactions=count, parallel_time=parallel_time(count, self.n),
            correct=correct, used_fallback=fb, used_ambassador=amb, timed_out=timed_out,
            phase_log=log, critical_phase_index=crit,
            max_out_of_sync=max([r.out_of_sync_count for r in log], default=0),
            empty_frac_min=min(fracs) if fracs else None,
            extra=self.extras(S, M),
        )


# ------------------------------------------------------- ambassador protocol

@njit(cache=True)
def _ambassador_kernel(S, i, j, P, M):
    amb_step(S, i, j)


@njit(cache=True)
def _ambassador_stable(S, P):
    if amb_column_stable(S):
        return STABLE
    if P[0] == 1:
        return ALL_FAILED
    return NOT_STABLE


class AmbassadorProtocol(ProtocolBase):
    """The 4-state exact-majority protocol on its own.

    ``engine="agents"`` simulates every interaction; ``engine="counts"`` jumps
    over null interactions on aggregate counts (same law, far faster at large n).
    ``"auto"`` picks counts for n > 64.
    """

    name = "ambassador"
    kernel = staticmethod(_ambassador_kernel)
    stable = staticmethod(_ambassador_stable)

    def __init__(self, n: int, black_count: int, engine: str = "auto"):
        super().__init__(n, black_count)
        if engine == "auto":
            engine = "counts" if n > 64 else "agents"
        if engine not in ("agents", "counts"):
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = engine
        self.params = np.array([1 if engine == "counts" else 0], np.int64)

    def initial_states(self):
        return self._init_common(N_COMMON)

    def default_max_interactions(self):
        n = self.n
        # expected time is Theta(n^2 log n) interactions
        return max(default_max_interactions(n), 20 * n * n * max(1, math.ceil(math.log(n))))

    def outputs(self, S):
        return amb_opinion(S[:, AMB])

    def flags(self, S, M):
        return False, True

