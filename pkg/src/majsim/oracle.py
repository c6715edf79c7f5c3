"""Exhaustive absorbing-chain solver for the ambassador protocol at tiny n.

The chain runs over full agent configurations (4**n of them), independent of
the count-based engine, and pairs are drawn uniformly from the n(n-1)/2
unordered pairs.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from .primitives import AMB_B, AMB_W, AmbassadorState, ambassador_stable, ambassador_step


def _configs(n: int):
    return list(itertools.product(range(4), repeat=n))


def _step(conf, i, j):
    a, b = ambassador_step(AmbassadorState.from_code(conf[i]), AmbassadorState.from_code(conf[j]))
    new = list(conf)
    new[i] = a.code
    new[j] = b.code
    return tuple(new)


def _is_stable(conf) -> bool:
    return ambassador_stable([AmbassadorState.from_code(c) for c in conf])


def initial_config(n: int, black_count: int):
    return tuple([AMB_B] * black_count + [AMB_W] * (n - black_count))


def reachable(n: int, start) -> set:
    seen = {start}
    todo = [start]
    pairs = list(itertools.combinations(range(n), 2))
    while todo:
        c = todo.pop()
        for i, j in pairs:
            d = _step(c, i, j)
            if d not in seen:
                seen.add(d)
                todo.append(d)
    return seen


def expected_stabilization(n: int, black_count: int) -> float:
    """Expected interactions until the configuration is stable.

    Solves ``(I - Q) t = 1`` over the transient configurations reachable from
    the all-strong input.
    """
    start = initial_config(n, black_count)
    states = sorted(reachable(n, start))
    transient = [c for c in states if not _is_stable(c)]
    if start not in transient:
        return 0.0
    idx = {c: k for k, c in enumerate(transient)}
    pairs = list(itertools.combinations(range(n), 2))
    m = len(transient)
    A = np.eye(m)
    w = 1.0 / len(pairs)
    for c in transient:
        r = idx[c]
        for i, j in pairs:
            d = _step(c, i, j)
            k = idx.get(d)
            if k is not None:
                A[r, k] -= w
    t = np.linalg.solve(A, np.ones(m))
    return float(t[idx[start]])


def absorbing_outputs(n: int, black_count: int) -> set:
    """Opinion tuples of every stable configuration reachable from the input."""
    start = initial_config(n, black_count)
    out = set()
    for c in reachable(n, start):
        if _is_stable(c):
            out.add(tuple(AmbassadorState.from_code(x).opinion for x in c))
    return out


def strong_difference(conf) -> int:
    return sum(1 for c in conf if c == AMB_B) - sum(1 for c in conf if c == AMB_W)


def broadcast_expected_time(n: int) -> Fraction:
    """Exact expected interactions for a broadcast from one agent to finish.

    With k informed agents the next success has probability k(n-k)/C(n,2).
    """
    total = Fraction(n * (n - 1), 2)
    return sum((total / (k * (n - k)) for k in range(1, n)), Fraction(0))
