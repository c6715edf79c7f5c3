"""``majsim`` command line: run trials, balls-into-bins sweeps, state census."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bins, census, harness
from .harness import ConfigError, ExperimentConfig


def _add_run(sub):
    p = sub.add_parser("run", help="simulate a majority protocol over seeded trials")
    p.add_argument("--config", help="key = value (or JSON) file; command-line flags override it")
    p.add_argument("--protocol", choices=harness.PROTOCOLS)
    p.add_argument("--n", type=int)
    p.add_argument("--black", type=int, help="number of black agents (default: n//2 + 1)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    p.add_argument("--a", help="epoch exponent (epoch protocols only)")
    p.add_argument("--c-len", type=float)
    p.add_argument("--c-catch", type=float)
    p.add_argument("--c-t", type=float)
    p.add_argument("--slack", type=float)
    p.add_argument("--pair-mode", choices=["unordered", "ordered"])
    p.add_argument("--max-parallel-time", help="interaction budget as parallel time")
    p.add_argument("--out", help="output file (.csv or .json); stdout when omitted")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--phase-log", help="per-phase records as CSV")
    p.add_argument("--threads", type=int, help=f"overrides ${harness.THREADS_ENV}")


def _add_bins(sub):
    p = sub.add_parser("bins", help="batch balls-into-bins with the Left rule")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--batches", type=int, default=128)
    p.add_argument("--strategy", choices=[s.value for s in bins.Strategy], default="left")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slack", type=float, default=bins.DEFAULT_SLACK)
    p.add_argument("--c1", type=float, default=2.0)
    p.add_argument("--c2", type=float, default=None)
    p.add_argument("--out")


def _add_census(sub):
    p = sub.add_parser("census", help="count visited abstract states")
    p.add_argument("--protocol", choices=census.CENSUS_PROTOCOLS, required=True)
    p.add_argument("--n-min", type=int, default=1024)
    p.add_argument("--n-max", type=int, default=65536)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="majsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_bins(sub)
    _add_census(sub)
    return ap


def config_from_args(args) -> ExperimentConfig:
    raw = harness.load_config_file(args.config) if args.config else {}
    flags = {
        "protocol": args.protocol, "n": args.n, "black_count": args.black,
        "trials": args.trials, "base_seed": args.seed, "a": args.a,
        "pair_mode": args.pair_mode, "max_parallel_time": args.max_parallel_time,
        "output": args.out, "format": args.format, "phase_log": args.phase_log,
    }
    aliases = {"black": "black_count", "seed": "base_seed", "out": "output"}
    merged = {aliases.get(k, k): v for k, v in raw.items()}
    consts = dict(merged.pop("constants", {}) or {})
    for k in harness.CONSTANT_KEYS:
        if k in merged:
            consts[k] = merged.pop(k)
        v = getattr(args, k)
        if v is not None:
            consts[k] = v
    merged.update({k: v for k, v in flags.items() if v is not None})
    if "protocol" not in merged or "n" not in merged:
        raise ConfigError("--protocol and --n are required (on the command line or in --config)")
    n = int(merged["n"])
    merged["n"] = n
    merged.setdefault("black_count", n // 2 + 1)
    for k in ("black_count", "trials", "base_seed"):
        if k in merged:
            merged[k] = int(merged[k])
    if merged.get("output") and "format" not in merged:
        merged["format"] = "json" if str(merged["output"]).endswith(".json") else "csv"
    unknown = set(merged) - {f for f in ExperimentConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(constants={k: float(v) for k, v in consts.items()}, **merged)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    results = harness.run_experiment(cfg, threads=args.threads)
    text = harness.write_outputs(cfg, results)
    if text is not None:
        sys.stdout.write(text)
    s = harness.summarize(results)
    print(f"{cfg.protocol} n={cfg.n} black={cfg.black_count} trials={s['trials']} "
          f"correct={s['correct_rate']:.3f} timed_out={s['timed_out']} "
          f"median_parallel_time={s['median_parallel_time']} "
          f"fallback={s['fallback_rate']:.3f} ambassador={s['ambassador_rate']:.3f}",
          file=sys.stderr)
    return 0 if harness.all_correct(results) else 1


BINS_COLUMNS = ("strategy", "n", "batches", "seed", "max_gap", "Q", "alpha_1", "alpha_2",
                "alpha_3", "alpha_4", "alpha_5", "violations")


def cmd_bins(args) -> int:
    strategy = bins.Strategy(args.strategy)
    if strategy is bins.Strategy.LEFT and (args.n < 2 or args.n % 2):
        raise ConfigError("the Left strategy needs an even n >= 2")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BINS_COLUMNS)
    profiles = []
    total_viol = 0
    gaps = []
    for k in range(args.trials):
        seed = args.seed + k
        st = bins.run_batches(args.n, args.batches, seed, strategy)
        prof = bins.holes_profile(st)
        profiles.append(prof)
        viol = bins.check_invariant1(prof, args.n, args.slack, args.c1, args.c2)
        total_viol += len(viol)
        gaps.append(bins.max_gap(st))
        alphas = [prof.alpha[i] if i < len(prof.alpha) else 0.0 for i in range(1, 6)]
        w.writerow([strategy.value, args.n, args.batches, seed, gaps[-1], prof.Q,
                    *(repr(float(a)) for a in alphas), len(viol)])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    tail = bins.hole_tail(profiles)
    worst = max(tail[i - 1] / bins.tail_bound(i) for i in range(1, len(tail) + 1))
    print(f"{strategy.value} n={args.n} batches={args.batches} trials={args.trials} "
          f"max_gap={max(gaps)} invariant_violations={total_viol} "
          f"worst_tail_ratio={worst:.3g}", file=sys.stderr)
    return 0


def cmd_census(args) -> int:
    if args.n_min < 4 or args.n_max < args.n_min:
        raise ConfigError("need 4 <= n-min <= n-max")
    ns = []
    k = math.ceil(math.log2(args.n_min))
    while 2 ** k <= args.n_max:
        ns.append(2 ** k)
        k += 1
    rows = census.state_census(args.protocol, ns, trials=args.trials, seed=args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol", "n", "distinct_abstract_states"])
    for r in rows:
        w.writerow([r.protocol, r.n, r.distinct_abstract_states])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if len(rows) >= 2:
        fit = census.fit_census(rows)
        print(f"linear fit vs log2 n: slope={fit.slope:.1f} intercept={fit.intercept:.1f} "
              f"R2={fit.r2:.4f}; exponent in log2 n: {fit.beta:.2f}", file=sys.stderr)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "bins":
            return cmd_bins(args)
        return cmd_census(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"majsim: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
