"""Experiment configuration, seeded trial batches and result files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .classic import TwoProtocol
from .epoch import EpochProtocol, Strategy
from .primitives import AmbassadorProtocol
from .sim import PairMode, RunResult, run_trial
from .threehalves import ThreeHalvesProtocol

PROTOCOLS = ("ambassador", "two", "epoch", "epoch-min", "three-halves")
CONSTANT_KEYS = ("c_len", "c_catch", "c_t", "slack")
CSV_COLUMNS = ("protocol", "n", "black_count", "a", "seed", "interactions", "parallel_time",
               "correct", "used_fallback", "used_ambassador", "timed_out",
               "critical_phase_index", "max_out_of_sync", "empty_frac_min")
PHASE_COLUMNS = ("protocol", "n", "seed", "phase_index", "black_at_start", "white_at_start",
                 "majority_minus_minority", "empty_fraction_after_cancel", "out_of_sync_count")
DEFAULT_A = {"epoch": Fraction(1, 3), "epoch-min": Fraction(1, 2)}
THREADS_ENV = "MAJSIM_THREADS"


class ConfigError(ValueError):
    pass


def _fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x).limit_denominator(10**6)
    return Fraction(float(x)).limit_denominator(10**6)


@dataclass
class ExperimentConfig:
    protocol: str
    n: int
    black_count: int
    a: Optional[Fraction] = None
    trials: int = 1
    base_seed: int = 0
    constants: dict = field(default_factory=dict)
    pair_mode: Optional[PairMode] = None
    max_parallel_time: Optional[Fraction] = None
    output: Optional[Path] = None
    format: str = "csv"
    phase_log: Optional[Path] = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        self.n = int(self.n)
        self.black_count = int(self.black_count)
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not 0 <= self.black_count <= self.n:
            raise ConfigError("black count must lie in [0, n]")
        if 2 * self.black_count == self.n:
            raise ConfigError("black count equals n/2: the inputs need a strict majority")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.protocol in DEFAULT_A:
            self.a = DEFAULT_A[self.protocol] if self.a is None else _fraction(self.a)
            if not 0 < self.a < 1:
                raise ConfigError("a must lie strictly between 0 and 1")
        else:
            self.a = None
        bad = set(self.constants) - set(CONSTANT_KEYS)
        if bad:
            raise ConfigError(f"unknown constants: {', '.join(sorted(bad))}")
        forced = {"epoch-min": PairMode.ORDERED, "three-halves": PairMode.UNORDERED}.get(self.protocol)
        if isinstance(self.pair_mode, str):
            self.pair_mode = PairMode(self.pair_mode)
        if forced is not None and self.pair_mode not in (None, forced):
            raise ConfigError(f"{self.protocol} requires {forced.value} pairs")
        if self.pair_mode is None:
            self.pair_mode = forced or PairMode.UNORDERED
        if self.pair_mode is PairMode.ORDERED and self.protocol != "epoch-min":
            raise ConfigError(f"{self.protocol} runs on unordered pairs")
        if self.max_parallel_time is not None:
            self.max_parallel_time = _fraction(self.max_parallel_time)
            if self.max_parallel_time <= 0:
                raise ConfigError("max parallel time must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.output is not None:
            self.output = Path(self.output)
        if self.phase_log is not None:
            self.phase_log = Path(self.phase_log)

    @property
    def max_interactions(self) -> Optional[int]:
        if self.max_parallel_time is None:
            return None
        return math.ceil(self.max_parallel_time * self.n)


def build_protocol(cfg: ExperimentConfig):
    c = {k: v for k, v in cfg.constants.items() if k != "slack"}
    if cfg.protocol == "ambassador":
        return AmbassadorProtocol(cfg.n, cfg.black_count)
    if cfg.protocol == "two":
        return TwoProtocol(cfg.n, cfg.black_count, **{k: c[k] for k in ("c_len",) if k in c})
    if cfg.protocol in ("epoch", "epoch-min"):
        strategy = Strategy.MIN if cfg.protocol == "epoch-min" else Strategy.BOTH
        kw = {k: c[k] for k in ("c_len", "c_catch") if k in c}
        return EpochProtocol(cfg.n, cfg.black_count, a=cfg.a, strategy=strategy, **kw)
    return ThreeHalvesProtocol(cfg.n, cfg.black_count,
                               **{k: c[k] for k in ("c_len", "c_catch", "c_t") if k in c})


def thread_count(env=os.environ) -> int:
    try:
        return max(1, int(env.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> list[RunResult]:
    """Run ``cfg.trials`` trials with seeds ``base_seed + i``; results in seed order."""
    proto = build_protocol(cfg)
    seeds = [cfg.base_seed + i for i in range(cfg.trials)]
    threads = thread_count() if threads is None else threads

    def one(seed):
        # protocols are read-only during a run, but give each thread its own
        return run_trial(build_protocol(cfg) if threads > 1 else proto, seed, cfg.max_interactions)

    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, seeds))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        return repr(float(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trial_row(cfg: ExperimentConfig, r: RunResult) -> dict:
    return {
        "protocol": r.protocol, "n": r.n, "black_count": r.black_count,
        "a": None if cfg.a is None else str(cfg.a), "seed": r.seed,
        "interactions": r.stabilization_interactions, "parallel_time": r.parallel_time,
        "correct": r.correct, "used_fallback": r.used_fallback,
        "used_ambassador": r.used_ambassador, "timed_out": r.timed_out,
        "critical_phase_index": r.critical_phase_index, "max_out_of_sync": r.max_out_of_sync,
        "empty_frac_min": r.empty_frac_min,
    }


def summarize(results: Sequence[RunResult]) -> dict:
    done = [r for r in results if not r.timed_out]
    times = [float(r.parallel_time) for r in done]
    phases: dict[int, list] = {}
    for r in done:
        for p in r.phase_log:
            phases.setdefault(p.phase_index, []).append(p)
    per_phase = []
    for k in sorted(phases):
        recs = phases[k]
        fr = [p.empty_fraction_after_cancel for p in recs if p.empty_fraction_after_cancel >= 0]
        per_phase.append({
            "phase_index": k, "trials": len(recs),
            "mean_margin": statistics.fmean(p.majority_minus_minority for p in recs),
            "mean_empty_fraction": statistics.fmean(fr) if fr else None,
            "mean_out_of_sync": statistics.fmean(p.out_of_sync_count for p in recs),
        })
    k = len(results)
    return {
        "trials": k,
        "timed_out": k - len(done),
        "median_parallel_time": statistics.median(times) if times else None,
        "mean_parallel_time": statistics.fmean(times) if times else None,
        "correct_rate": sum(bool(r.correct) for r in results) / k if k else None,
        "fallback_rate": sum(r.used_fallback for r in results) / k if k else None,
        "ambassador_rate": sum(r.used_ambassador for r in results) / k if k else None,
        "phases": per_phase,
    }


def all_correct(results: Sequence[RunResult]) -> bool:
    return all(r.correct is True and not r.timed_out for r in results)


def csv_text(cfg: ExperimentConfig, results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = trial_row(cfg, r)
        w.writerow([_cell(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def json_text(cfg: ExperimentConfig, results: Sequence[RunResult],
              timestamp: Optional[str] = None) -> str:
    rows = []
    for r in results:
        row = trial_row(cfg, r)
        row["parallel_time"] = float(row["parallel_time"])
        rows.append(row)
    meta = {
        "config": {
            "protocol": cfg.protocol, "n": cfg.n, "black_count": cfg.black_count,
            "a": None if cfg.a is None else str(cfg.a), "trials": cfg.trials,
            "base_seed": cfg.base_seed, "constants": cfg.constants,
            "pair_mode": cfg.pair_mode.value,
            "max_parallel_time": None if cfg.max_parallel_time is None else str(cfg.max_parallel_time),
        },
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(),
    }
    doc = {"metadata": meta, "trials": rows, "summary": summarize(results)}
    return json.dumps(doc, indent=2) + "\n"


def phase_log_text(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PHASE_COLUMNS)
    for r in results:
        for p in r.phase_log:
            w.writerow([r.protocol, r.n, r.seed, p.phase_index, p.black_at_start, p.white_at_start,
                        p.majority_minus_minority, repr(p.empty_fraction_after_cancel),
                        p.out_of_sync_count])
    return buf.getvalue()


def write_outputs(cfg: ExperimentConfig, results: Sequence[RunResult]) -> Optional[str]:
    """Write the configured files; returns the trial text when no path is set."""
    text = csv_text(cfg, results) if cfg.format == "csv" else json_text(cfg, results)
    if cfg.phase_log is not None:
        cfg.phase_log.write_text(phase_log_text(results))
    if cfg.output is None:
        return text
    cfg.output.write_text(text)
    return None


# ------------------------------------------------------------- config files

def parse_config_text(text: str) -> dict:
    """``key = value`` lines (``#`` comments) or a JSON object."""
    s = text.strip()
    if s.startswith("{"):
        return json.loads(s)
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def load_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text())
