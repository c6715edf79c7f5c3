"""Acceptance suite: each test prints one PASS/FAIL line for its criterion."""

import math
import os
import time

import numpy as np
import pytest

from majsim import bins, oracle
from majsim.census import fit_census, state_census
from majsim.classic import TwoProtocol
from majsim.harness import ExperimentConfig, run_experiment
from majsim.primitives import AmbassadorProtocol
from majsim.sim import Population, run, run_trial
from majsim.threehalves import ThreeHalvesProtocol

THREADS = os.cpu_count() or 1
N14 = 2 ** 14


def population(n: int, d: int) -> tuple[int, int]:
    """Agents and black count for margin ``d``, adding one agent when parity needs it."""
    m = n + (n + d) % 2
    return m, (m + d) // 2


def _trials(proto_cls, n, d, seeds):
    m, black = population(n, d)
    proto = proto_cls(m, black)
    return [run_trial(proto, s) for s in seeds]


@pytest.fixture(scope="session")
def runs_n14():
    """d_0 = 1 at n = 2^14: 50 seeds each, shared by criteria 3, 5 and 8."""
    return {cls.name: _trials(cls, N14, 1, range(50))
            for cls in (TwoProtocol, ThreeHalvesProtocol)}


# ---------------------------------------------------------------- 1

def test_c1_exact_correctness(acceptance_report):
    t0 = time.time()
    bad, timeouts, total = [], 0, 0
    for proto in ("ambassador", "two", "epoch", "epoch-min", "three-halves"):
        for n in (256, 1024, 4096):
            for d in (1, math.ceil(n / 100), math.ceil(n / 3) + 1, n - 2):
                m, black = population(n, d)
                cfg = ExperimentConfig(proto, m, black, trials=200)
                for r in run_experiment(cfg, threads=THREADS):
                    total += 1
                    timeouts += r.timed_out
                    if not r.timed_out and not r.correct:
                        bad.append((proto, m, black, r.seed))
    elapsed = time.time() - t0
    ok_correct = not bad and timeouts == 0
    ok_time = elapsed < 600
    acceptance_report(1, ok_correct and ok_time,
                      f"{total} trials, {len(bad)} wrong, {timeouts} timed out, "
                      f"runtime {elapsed:.0f} s on {THREADS} thread(s) (budget 600 s)")
    assert not bad, bad[:10]
    assert timeouts == 0
    assert ok_time, f"runtime {elapsed:.0f} s over the 600 s budget"


# ---------------------------------------------------------------- 2

def test_c2_small_n_oracle(acceptance_report):
    worst = 0.0
    parts = []
    for n in (3, 4, 5):
        black = n // 2 + 1
        exact = float(oracle.expected_stabilization(n, black))
        proto = AmbassadorProtocol(n, black, engine="agents")
        sim = np.mean([run_trial(proto, s, cadence=1).stabilization_interactions
                       for s in range(10 ** 5)])
        err = abs(sim - exact) / exact
        worst = max(worst, err)
        parts.append(f"n={n} sim {sim:.3f} exact {exact:.3f}")
    ok = worst <= 0.02
    acceptance_report(2, ok, "; ".join(parts) + f"; worst rel. error {worst:.4f} (tol 0.02)")
    assert ok


# ---------------------------------------------------------------- 3

def _precritical_empty(results):
    fr = []
    for r in results:
        crit = r.critical_phase_index
        for p in r.phase_log:
            if crit is not None and p.phase_index >= crit:
                continue
            if p.empty_fraction_after_cancel >= 0:
                fr.append(p.empty_fraction_after_cancel)
    return np.array(fr)


def test_c3_empty_fraction(acceptance_report, runs_n14):
    parts, ok = [], True
    for name, results in runs_n14.items():
        fr = _precritical_empty(results)
        share = float(np.mean(fr >= 0.55)) if fr.size else 0.0
        ok &= fr.size > 0 and share >= 0.95
        parts.append(f"{name}: {share:.3f} of {fr.size} phases >= 0.55")
    acceptance_report(3, ok, "; ".join(parts) + " (need 0.95)")
    assert ok


# ---------------------------------------------------------------- 4

def _doubles(r) -> bool:
    crit = r.critical_phase_index
    margin = {p.phase_index: p.majority_minus_minority for p in r.phase_log}
    top = max(margin) if crit is None else crit
    return all(margin.get(p + 1) == 2 * margin[p] for p in range(top) if p in margin)


def test_c4_doubling(acceptance_report):
    parts, ok = [], True
    for d in (2, 8):
        results = _trials(TwoProtocol, N14, d, range(50))
        share = float(np.mean([_doubles(r) for r in results]))
        ok &= share >= 0.90
        parts.append(f"d0={d}: {share:.2f} of trials double exactly")
    acceptance_report(4, ok, "; ".join(parts) + " (need 0.90)")
    assert ok


# ---------------------------------------------------------------- 5

def test_c5_synchronized_epochs(acceptance_report, runs_n14):
    synced, u_ok, u_all = [], 0, 0
    for r in runs_n14["three-halves"]:
        if r.critical_phase_index is None:
            continue
        K = r.extra["K"]
        main_crit = r.critical_phase_index - 2
        for e in range(max(0, main_crit) // K):
            synced.append(r.extra["oos_at_epoch_end"][e] == 0)
            u_all += 1
            u_ok += r.extra["U"][e] < r.n / 10
    share = float(np.mean(synced)) if synced else 0.0
    ok = bool(synced) and share >= 0.95 and u_ok == u_all
    acceptance_report(5, ok, f"{share:.3f} of {len(synced)} pre-critical epochs end synced "
                             f"(need 0.95); U < n/10 in {u_ok}/{u_all} catch-ups")
    assert ok


# ---------------------------------------------------------------- 6

def test_c6_invariant1_and_tail(acceptance_report):
    t0 = time.time()
    n, t = 2 ** 10, 128
    violations, profiles = 0, []
    for seed in range(1000):
        p = bins.holes_profile(bins.run_batches(n, t, seed))
        violations += len(bins.check_invariant1(p, n, bins.DEFAULT_SLACK, c1=2.0))
        profiles.append(p)
    tail = bins.hole_tail(profiles)
    tail_ok = all(x <= bins.tail_bound(i) for i, x in enumerate(tail, start=1))
    elapsed = time.time() - t0
    ok = violations == 0 and tail_ok and elapsed < 120
    acceptance_report(6, ok, f"{violations} Invariant 1 violations, tail within bound: {tail_ok} "
                             f"(Pr[q>=6] {tail[0]:.2e} vs {bins.tail_bound(1):.2f}), "
                             f"runtime {elapsed:.0f} s (budget 120 s)")
    assert ok


# ---------------------------------------------------------------- 7

def test_c7_max_gap(acceptance_report):
    t = 128
    calib = max(bins.max_gap(bins.run_batches(2 ** 8, t, 10_000 + s)) for s in range(100))
    C = calib / math.log2(math.log2(2 ** 8))
    parts, ok = [f"C = {C:.3f}"], True
    for k in (10, 12):
        n = 2 ** k
        bound = C * math.log2(k)
        left = [bins.max_gap(bins.run_batches(n, t, s)) for s in range(100)]
        one = [bins.max_gap(bins.run_batches(n, t, s, bins.Strategy.ONE_CHOICE))
               for s in range(100)]
        within = sum(g <= bound for g in left)
        wins = sum(o > g for o, g in zip(one, left))
        ok &= within == 100 and wins >= 99
        parts.append(f"n=2^{k}: {within}/100 within {bound:.2f}, one-choice larger {wins}/100")
    acceptance_report(7, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 8

def test_c8_time_scaling(acceptance_report, runs_n14):
    t0 = time.time()
    med = {"two": [], "three-halves": []}
    last = {}
    for k in (10, 12, 14, 16):
        for cls in (TwoProtocol, ThreeHalvesProtocol):
            if k == 14:
                rs = runs_n14[cls.name][:30]
            else:
                m, black = population(2 ** k, 1)
                cfg = ExperimentConfig(cls.name, m, black, trials=30)
                rs = run_experiment(cfg, threads=THREADS)
            med[cls.name].append(float(np.median([float(r.parallel_time) for r in rs])))
            last[cls.name] = rs
    elapsed = time.time() - t0
    paired = float(np.mean([a.parallel_time <= b.parallel_time
                            for a, b in zip(last["three-halves"], last["two"])]))
    x = np.log([10, 12, 14, 16])
    beta = {k: float(np.polyfit(x, np.log(v), 1)[0]) for k, v in med.items()}
    gap = beta["two"] - beta["three-halves"]
    ok = paired >= 0.90 and gap >= 0.25 and elapsed < 1800
    acceptance_report(8, ok, f"medians two {med['two']}, three-halves {med['three-halves']}; "
                             f"paired at 2^16 {paired:.2f} (need 0.90); beta two "
                             f"{beta['two']:.2f}, three-halves {beta['three-halves']:.2f}, gap "
                             f"{gap:.2f} (need 0.25); runtime {elapsed:.0f} s excluding the shared "
                             f"2^14 runs (budget 1800 s)")
    assert paired >= 0.90 and gap >= 0.25
    assert elapsed < 1800, f"runtime {elapsed:.0f} s over the 1800 s budget"


# ---------------------------------------------------------------- 9

def test_c9_role_creation(acceptance_report):
    abundant = balanced = total = 0
    for d in (1, N14 // 3):
        m, black = population(N14, d)
        proto = ThreeHalvesProtocol(m, black)
        for seed in range(200):
            pop = Population(m, proto.initial_states(), seed)
            ex = run(proto, pop, max_interactions=N14 // 12).extra
            clocks = ex["left_clocks"] + ex["right_clocks"]
            total += 1
            abundant += clocks >= N14 / 30 and ex["workers"] >= N14 / 30
            balanced += ex["left_clocks"] == ex["right_clocks"]
    ok = abundant >= 0.99 * total and balanced == total
    acceptance_report(9, ok, f"abundant roles in {abundant}/{total}, balanced sides in "
                             f"{balanced}/{total} (d0 = 1 and n/3)")
    assert ok


# ---------------------------------------------------------------- 10

def test_c10_state_census(acceptance_report):
    amb = [r.distinct_abstract_states for r in state_census("ambassador", [2 ** 10, 2 ** 16])]
    ns = [2 ** k for k in range(10, 17)]
    th_rows = state_census("three-halves", ns)
    two_rows = state_census("two", ns)
    th_fit, two_fit = fit_census(th_rows), fit_census(two_rows)
    ok = (amb == [4, 4] and th_fit.r2 >= 0.95 and two_fit.beta >= 1.8
          and two_fit.beta - th_fit.beta >= 0.8)
    acceptance_report(10, ok, f"ambassador {amb}; three-halves R2 {th_fit.r2:.3f} (need 0.95), "
                              f"exponent {th_fit.beta:.2f}; two exponent {two_fit.beta:.2f} "
                              f"(need >= 1.8 and >= three-halves + 0.8)")
    assert ok
