"""Wall-clock benchmark harness.

Events are loaded before timing starts and only the finder call itself is
inside the timed region.
"""
from __future__ import annotations

import statistics
import time
from typing import Callable, Sequence

from .evaluation import S_MIN, T_MAX, ScoreReport, accuracy_score, throughput_score
from .event_model import Event, Solution

Runner = Callable[[Event], Solution]


def time_events(events: Sequence[Event], runner: Runner) -> tuple[list[float], list[Solution]]:
    """Per-event finder wall times (seconds) and the solutions produced."""
    times, solutions = [], []
    clock = time.perf_counter
    for ev in events:
        t0 = clock()
        sol = runner(ev)
        times.append(clock() - t0)
        solutions.append(sol)
    return times, solutions


def bench(events: Sequence[Event], runner: Runner, repetitions: int = 1, warmup: int = 0,
          t_max: float = T_MAX, s_min: float = S_MIN) -> ScoreReport:
    """Time ``runner`` over all events ``repetitions`` times.

    ``time`` is the mean over repetitions of the mean per-event time and
    ``spread`` the relative standard deviation of the repetition means.
    Accuracy comes from the last repetition's solutions. ``warmup`` untimed
    passes run first so caches and allocators settle. A runner failure
    makes the report invalid with zero scores.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not events:
        raise ValueError("no events to benchmark")
    rep_times: list[float] = []
    solutions: list[Solution] = []
    try:
        for _ in range(warmup):
            time_events(events, runner)
        for _ in range(repetitions):
            times, solutions = time_events(events, runner)
            rep_times.append(sum(times) / len(times))
    except Exception as exc:  # any finder failure invalidates the run
        return ScoreReport(0.0, {}, None, 0.0, len(events), valid=False,
                           repetition_times=rep_times, error=f"{type(exc).__name__}: {exc}")
    per_event = {ev.event_id: accuracy_score(ev, sol) for ev, sol in zip(events, solutions)}
    s = sum(per_event.values()) / len(per_event)
    t = statistics.fmean(rep_times)
    spread = statistics.pstdev(rep_times) / t if len(rep_times) > 1 and t > 0 else 0.0
    thr = throughput_score(s, t, t_max, s_min) if t > 0 else 0.0
    return ScoreReport(s, per_event, t, thr, len(events), repetition_times=rep_times, spread=spread)
