import pytest
from hypothesis import given, settings, strategies as st

from majsim.classic import (Stage, TwoProtocol, TwoState, phase_cap, stage_length, stage_of,
                            two_output, two_transition)
from majsim.primitives import BLACK, EMPTY, WHITE, AmbassadorState
from majsim.sim import run_trial

L = 10
CAP = 12
colors = st.sampled_from([EMPTY, BLACK, WHITE])
ambs = st.sampled_from([AmbassadorState.from_code(c) for c in range(4)])


def test_stage_of_examples():
    assert stage_of(0, L) is Stage.CANCELLATION
    assert stage_of(2 * L, L) is Stage.SPLITTING
    assert stage_of(4 * L - 1, L) is Stage.BUFFER2
    assert stage_of(L, L) is Stage.BUFFER1
    with pytest.raises(ValueError):
        stage_of(4 * L, L)


def test_cancellation():
    u, v = two_transition(TwoState(BLACK, last=BLACK), TwoState(WHITE, last=WHITE), L, CAP)
    assert u.color == v.color == EMPTY
    assert u.step == v.step == 1


def test_split():
    u = TwoState(BLACK, step=2 * L, last=BLACK)
    v = TwoState(EMPTY, step=2 * L, last=WHITE)
    u2, v2 = two_transition(u, v, L, CAP)
    assert u2.color == v2.color == BLACK
    assert u2.split_used and v2.split_used


def test_same_color_no_cancel():
    u, v = two_transition(TwoState(BLACK), TwoState(BLACK), L, CAP)
    assert u.color == v.color == BLACK


def test_stage_gap_fails():
    u, v = two_transition(TwoState(BLACK, step=0), TwoState(BLACK, step=2 * L), L, CAP)
    assert u.fail and v.fail


def test_buffer2_pulled_into_next_phase():
    u = TwoState(BLACK, phase=1, step=3 * L + 2)
    v = TwoState(WHITE, phase=2, step=1)
    u2, v2 = two_transition(u, v, L, CAP)
    assert u2.phase == 2 and u2.step == 0
    assert not u2.fail and not v2.fail


def test_entering_buffer2_without_split_sets_done():
    u = TwoState(BLACK, step=3 * L - 1)
    v = TwoState(BLACK, step=3 * L - 1)
    u2, v2 = two_transition(u, v, L, CAP)
    assert u2.done and v2.done


def test_entering_buffer2_after_split_resets_flag():
    u = TwoState(BLACK, step=3 * L - 1, split_used=True)
    v = TwoState(BLACK, step=3 * L - 1, split_used=True)
    u2, _ = two_transition(u, v, L, CAP)
    assert not u2.done and not u2.split_used


def test_phase_overflow_fails():
    u = TwoState(BLACK, phase=CAP - 1, step=4 * L - 1)
    v = TwoState(BLACK, phase=CAP - 1, step=4 * L - 1)
    u2, v2 = two_transition(u, v, L, CAP)
    assert u2.fail and v2.fail


def test_done_conflict_fails():
    u = TwoState(BLACK, done=True)
    v = TwoState(WHITE, done=True)
    u2, v2 = two_transition(u, v, L, CAP)
    assert u2.fail and v2.fail


def test_done_spreads_to_empty():
    u2, v2 = two_transition(TwoState(BLACK, done=True), TwoState(EMPTY, last=WHITE), L, CAP)
    assert v2.done and v2.color == BLACK


def test_fail_propagates():
    u2, v2 = two_transition(TwoState(BLACK, fail=True), TwoState(WHITE), L, CAP)
    assert v2.fail


def test_outputs():
    assert two_output(TwoState(EMPTY, fail=True, ambassador=AmbassadorState(BLACK, False))) == BLACK
    assert two_output(TwoState(WHITE, done=True)) == WHITE
    assert two_output(TwoState(EMPTY, last=BLACK)) == BLACK


@given(colors, colors, st.integers(0, 4 * L - 1), st.integers(-1, 1), st.booleans(), st.booleans(),
       ambs, ambs)
@settings(max_examples=300, deadline=None)
def test_signed_difference_conserved(cu, cv, step, dstage, su, sv, au, av):
    # same phase, stages at most one apart: no fail, so only cancel/split touch colors
    sv_step = min(max(step + dstage * L, 0), 4 * L - 1)
    u = TwoState(cu, phase=1, step=step, split_used=su, ambassador=au, last=cu or BLACK)
    v = TwoState(cv, phase=1, step=sv_step, split_used=sv, ambassador=av, last=cv or BLACK)
    u2, v2 = two_transition(u, v, L, CAP)

    def signed(*xs):
        return sum(x.color == BLACK for x in xs) - sum(x.color == WHITE for x in xs)

    change = signed(u2, v2) - signed(u, v)
    if u2.fail or v2.fail or u2.done or v2.done:
        return
    cancelled = {u.color, v.color} == {BLACK, WHITE} and u2.color == v2.color == EMPTY
    split = (u.color == EMPTY) != (v.color == EMPTY) and u2.color == v2.color != EMPTY
    if cancelled:
        assert change == 0
    elif split:
        src = u.color or v.color
        assert change == (1 if src == BLACK else -1)
    else:
        assert change == 0


@given(ambs, ambs)
@settings(max_examples=50, deadline=None)
def test_ambassador_runs_in_background(au, av):
    from majsim.primitives import ambassador_step
    u2, v2 = two_transition(TwoState(BLACK, ambassador=au), TwoState(BLACK, ambassador=av), L, CAP)
    assert (u2.ambassador, v2.ambassador) == ambassador_step(au, av)


def test_params():
    assert stage_length(1024) == 240
    assert stage_length(1024, 4) == 40
    assert phase_cap(1024) == 12


@pytest.mark.parametrize("n,black", [(256, 129), (257, 256), (1024, 600), (101, 0)])
def test_runs_correct(n, black):
    for seed in range(3):
        r = run_trial(TwoProtocol(n, black), seed)
        assert r.correct and not r.timed_out


def test_phase_log_margins():
    r = run_trial(TwoProtocol(1025, 513), 3)
    log = r.phase_log
    assert log[0].majority_minus_minority == 1
    assert all(abs(p.majority_minus_minority) <= 1025 for p in log)
    assert all(0 <= p.empty_fraction_after_cancel <= 1 or p.empty_fraction_after_cancel == -1
               for p in log)


@pytest.mark.slow
def test_fail_rarity_n4096():
    n = 4097
    fails = sum(run_trial(TwoProtocol(n, 2049), s).used_ambassador for s in range(1000))
    assert fails <= 10
