import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from majsim import threehalves as th
from majsim.classic import BUF2, SPLITTING
from majsim.primitives import BLACK, EMPTY, WHITE
from majsim.sim import Population, run, run_trial
from majsim.threehalves import (CLOCK_SPREAD_C, LEFT, MAIN, RIGHT, WAITING, WORKER,
                                NodeState, Slot, ThreeHalvesParams, ThreeHalvesProtocol,
                                clock_progress, clock_tick, initial_interaction,
                                schedule_from_gamma, threehalves_output, warmup_transition,
                                worker_clock_interaction)

P = ThreeHalvesParams.build(1024)
T = P.T_epoch


def test_params_shape():
    assert P.K == 4 and P.K * P.E >= 10
    assert T == 2 * P.K * P.L_p + P.L_c
    assert P.fallback_phases == 12


# ------------------------------------------------------------ initial roles

def test_first_cancellation_makes_clocks():
    u, v = initial_interaction(NodeState.fresh(BLACK), NodeState.fresh(WHITE), P)
    assert (u.role, v.role) == (RIGHT, LEFT)
    u, v = initial_interaction(NodeState.fresh(WHITE), NodeState.fresh(BLACK), P)
    assert (u.role, v.role) == (LEFT, RIGHT)


def test_same_color_fresh_pair_become_workers():
    u, v = initial_interaction(NodeState.fresh(BLACK), NodeState.fresh(BLACK), P)
    assert u.role == v.role == WORKER
    assert u.color == v.color == BLACK


def test_fresh_meets_worker():
    w = NodeState.worker(BLACK, phase=0, step=3)
    u, v = initial_interaction(NodeState.fresh(WHITE), w, P)
    assert u.role == WORKER and u.color == WHITE
    # only the background ambassador moves
    assert replace(v, amb=w.amb) == w


def test_initial_interaction_rejects_non_fresh():
    with pytest.raises(ValueError):
        initial_interaction(NodeState.worker(BLACK), NodeState.fresh(BLACK), P)


# ------------------------------------------------------------------ clocks

def test_tie_left_increments():
    u, v = clock_tick(NodeState.clock(LEFT, 4), NodeState.clock(RIGHT, 4), P)
    assert (u.gamma, v.gamma) == (5, 4)


def test_smaller_counter_increments():
    u, v = clock_tick(NodeState.clock(LEFT, 7), NodeState.clock(RIGHT, 3), P)
    assert (u.gamma, v.gamma) == (7, 4)


def test_wrap_sets_gate():
    u, v = clock_tick(NodeState.clock(LEFT, T - 1, True), NodeState.clock(RIGHT, T - 1, True), P)
    assert u.gamma == 0 and u.gate
    tw = P.t_warm
    u, v = clock_tick(NodeState.clock(LEFT, tw - 1), NodeState.clock(RIGHT, tw - 1), P)
    assert u.gamma == 0 and u.gate and not v.gate


def test_same_side_clocks_ignore_each_other():
    a, b = NodeState.clock(LEFT, 2), NodeState.clock(LEFT, 5)
    assert clock_tick(a, b, P) == (a, b)


@given(st.integers(0, T - 1), st.integers(0, T - 1), st.booleans())
@settings(max_examples=200, deadline=None)
def test_tick_moves_exactly_one_clock(gl, gr, flip):
    a, b = NodeState.clock(LEFT, gl, True), NodeState.clock(RIGHT, gr, True)
    x, y = clock_tick(*((b, a) if flip else (a, b)), P)
    if flip:
        x, y = y, x
    moved = [(x.gamma - gl) % T, (y.gamma - gr) % T]
    assert sorted(moved) == [0, 1]
    assert 0 <= x.gamma < T and 0 <= y.gamma < T


def test_schedule_examples():
    assert schedule_from_gamma(0, P) == (0, Slot.CANCELLATION)
    assert schedule_from_gamma(P.L_p, P) == (0, Slot.SPLITTING)
    assert schedule_from_gamma(2 * P.L_p, P) == (1, Slot.CANCELLATION)
    assert schedule_from_gamma(2 * P.K * P.L_p, P) == (None, Slot.CATCH_UP)
    with pytest.raises(ValueError):
        schedule_from_gamma(T, P)


# ------------------------------------------------------------------ workers

def _main(slot, color=BLACK, **kw):
    return NodeState.worker(color, mode=MAIN, slot=slot, r0=color, r1=color, r2=color, **kw)


def test_worker_follows_clock_forward():
    # phase 2 Cancellation is slot 4; Splitting is slot 5
    w = _main(4)
    c = NodeState.clock(RIGHT, 5 * P.L_p, True)
    w2, c2 = worker_clock_interaction(w, c, P)
    assert w2.slot == 5 and c2 == c


def test_worker_never_moves_backward():
    w = _main(6)
    c = NodeState.clock(LEFT, 4 * P.L_p, True)
    w2, c2 = worker_clock_interaction(w, c, P)
    # pint is a metrics-only interaction counter
    assert replace(w2, pint=0) == w and c2 == c


def test_waiting_worker_needs_gate():
    w = NodeState.worker(BLACK, mode=WAITING, phase=2)
    c = NodeState.clock(LEFT, 3)
    assert worker_clock_interaction(w, c, P) == (w, c)
    w2, _ = worker_clock_interaction(w, NodeState.clock(LEFT, 0, True), P)
    assert w2.mode == MAIN and w2.slot == 0


# ------------------------------------------------------------------ fallback

def _fb(slot, color=BLACK, **kw):
    return NodeState.worker(color, mode=th.FALLBACK, slot=slot, fb=1, **kw)


def _fb_clock(slot):
    return replace(NodeState.clock(LEFT, slot * P.L_p, True), fb=1)


def test_unsplit_node_owes_a_split_before_done():
    w2, _ = worker_clock_interaction(_fb(1), _fb_clock(2), P)
    assert w2.slot == 2 and w2.phi == 1 and not w2.done
    w3, _ = worker_clock_interaction(w2, _fb_clock(3), P)
    assert w3.done and w3.color == BLACK


def test_split_node_carries_no_debt():
    w2, _ = worker_clock_interaction(_fb(1, split=1), _fb_clock(3), P)
    assert w2.slot == 3 and w2.phi == 0 and w2.split == 0 and not w2.done


def test_debt_paid_with_empty_node():
    u, v = th.transition(_fb(2, phi=1), _fb(1, EMPTY), P)
    assert u.phi == 0 and u.color == BLACK
    # the copy counts as the receiver's split for its splitting slot
    assert v.color == BLACK and v.split == 1
    assert th.transition(_fb(2, phi=1), _fb(4, EMPTY), P) == (
        _fb(2, phi=1), _fb(4, EMPTY))


def test_debtor_does_not_cancel():
    u, v = _fb(2, phi=1), _fb(2, WHITE)
    assert th.transition(u, v, P) == (u, v)
    a, b = th.transition(_fb(2), _fb(2, WHITE), P)
    assert a.color == EMPTY and b.color == EMPTY


def test_warmup_no_split_broadcasts():
    u = NodeState.worker(BLACK, stage=SPLITTING, step=P.L_w - 1)
    v = NodeState.worker(BLACK, stage=SPLITTING, step=P.L_w - 1)
    u2, v2 = warmup_transition(u, v, P)
    assert u2.broadcasting and v2.broadcasting
    assert threehalves_output(u2) == BLACK


def test_warmup_completion_waits():
    u = NodeState.worker(WHITE, phase=1, stage=BUF2, step=P.L_w - 1)
    v = NodeState.worker(EMPTY, phase=1, stage=BUF2, step=P.L_w - 1)
    u2, v2 = warmup_transition(u, v, P)
    assert u2.mode == v2.mode == WAITING


def test_warmup_ignores_clocks():
    w = NodeState.worker(BLACK, step=7)
    c = NodeState.clock(LEFT, 3, True)
    assert th.transition(w, c, P) == (w, c)


def test_outputs():
    assert threehalves_output(NodeState.worker(BLACK, done=1)) == BLACK
    failed = NodeState(role=WORKER, color=BLACK, fail=1, amb=3)
    assert threehalves_output(failed) == WHITE
    assert threehalves_output(_main(0, BLACK)) == BLACK
    assert threehalves_output(NodeState(role=WORKER, color=EMPTY, last=WHITE, mode=MAIN)) == WHITE


# --------------------------------------------------------------- invariants

@given(st.integers(12, 400), st.data(), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_roles_balanced_and_majority_kept(n, data, seed):
    black = data.draw(st.integers(0, n).filter(lambda b: 2 * b != n))
    proto = ThreeHalvesProtocol(n, black)
    pop = Population(n, proto.initial_states(), seed)
    r = run(proto, pop, max_interactions=40 * n)
    ex = r.extra
    assert ex["left_clocks"] == ex["right_clocks"]
    if ex["fresh"] == 0:
        warm0 = r.phase_log[0]
        assert warm0.phase_index == 0
        assert warm0.majority_minus_minority == 2 * black - n
        assert ex["workers"] + 2 * ex["left_clocks"] == n


def test_role_abundance_after_n_over_12():
    n = 4096
    for black in (n // 2 + 1, 2 * n // 3):
        proto = ThreeHalvesProtocol(n + 1, black)
        for seed in range(20):
            pop = Population(n + 1, proto.initial_states(), seed)
            ex = run(proto, pop, max_interactions=(n + 1) // 12).extra
            assert 2 * ex["left_clocks"] >= n / 30
            assert ex["workers"] >= n / 30


def _clock_spread(n, seed):
    proto = ThreeHalvesProtocol(n, n // 2 + 1)
    pop = Population(n, proto.initial_states(), seed)
    worst = 0.0
    while True:
        r = run(proto, pop, max_interactions=pop.interactions + n)
        g = clock_progress(pop.states, proto.tp)
        worst = max(worst, float(g.max() - g.mean()))
        if not r.timed_out:
            return worst / math.log2(math.log2(n))


def test_clock_concentration_n4096():
    for seed in range(3):
        assert _clock_spread(4097, 100 + seed) <= CLOCK_SPREAD_C


@pytest.mark.parametrize("n,black", [(257, 129), (1025, 513), (1024, 1), (4097, 2049),
                                     (1000, 999)])
def test_runs_correct(n, black):
    for seed in range(2):
        r = run_trial(ThreeHalvesProtocol(n, black), seed)
        assert r.correct and not r.timed_out


@pytest.mark.slow
def test_worker_synchrony_n16384():
    n = 2 ** 14 + 1
    proto = ThreeHalvesProtocol(n, n // 2 + 1)
    ok = total = 0
    for seed in range(8):
        r = run_trial(proto, seed)
        assert r.correct
        workers = r.extra["workers"]
        crit = r.critical_phase_index
        for rec in r.phase_log:
            idx = rec.phase_index - 2
            if idx < 0 or (crit is not None and rec.phase_index >= crit):
                continue
            if rec.empty_fraction_after_cancel < 0:
                continue
            total += 1
            ok += r.extra["few_interactions"][idx] <= 0.05 * workers
    assert total > 0 and ok >= 0.95 * total
