"""Scores and efficiency analysis.

Accuracy is the weighted fraction of primary hits placed in a track whose
majority particle is their own. The throughput score combines accuracy and
mean time per event. Efficiencies count particles, not hits.
"""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DomainError, ValidationError
from .event_model import Event, Particle, Solution, kinematics, wrap_angle

T_MAX = 600.0
S_MIN = 0.5
VARIABLES = ("log10_pt", "phi", "eta", "r0", "z0")
TABLE_COLUMNS = ("variable", "bin_low", "bin_high", "charge", "matched", "total", "efficiency", "uncertainty")


def _require_truth(event: Event) -> None:
    if not event.has_truth and event.hits:
        raise ValidationError(f"event {event.event_id} has no truth")


def _primary_ids(event: Event) -> set[int]:
    return {p.particle_id for p in event.particles if not p.is_secondary}


def accuracy_score(event: Event, solution: Solution, double_majority: bool = False) -> float:
    """Weighted fraction of correctly assigned primary hits, in [0, 1].

    A hit is correct when its particle is primary, the hit sits in a
    non-zero track, and that particle holds more than half of the track's
    summed weight. With ``double_majority`` the track must also hold more
    than half of the particle's own weight. Secondary and noise hits enter
    neither numerator nor denominator; an event with no primary weight
    scores 0.
    """
    _require_truth(event)
    primaries = _primary_ids(event)
    truth = event.truth_by_hit
    track_weight: dict[int, float] = defaultdict(float)
    contrib: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    particle_weight: dict[int, float] = defaultdict(float)
    total = 0.0
    for hid, link in truth.items():
        w = link.weight
        if link.particle_id in primaries:
            total += w
            particle_weight[link.particle_id] += w
        tid = solution.assignment.get(hid, 0)
        if tid != 0:
            track_weight[tid] += w
            contrib[tid][link.particle_id] += w
    if total <= 0.0:
        return 0.0
    good = 0.0
    for tid, by_particle in contrib.items():
        tw = track_weight[tid]
        if tw <= 0.0:
            continue
        pid, w = max(by_particle.items(), key=lambda kv: (kv[1], -kv[0]))
        if pid not in primaries or pid == 0 or not w > 0.5 * tw:
            continue
        if double_majority and not w > 0.5 * particle_weight[pid]:
            continue
        good += w
    return min(1.0, good / total)


def throughput_score(accuracy: float, time: float, t_max: float = T_MAX, s_min: float = S_MIN) -> float:
    """``(S - S_min) * sqrt(ln(1 + t_max / t))``, zero when S <= S_min or t >= t_max."""
    if not time > 0.0:
        raise DomainError(f"time per event must be positive, got {time}")
    if accuracy <= s_min or time >= t_max:
        return 0.0
    return (accuracy - s_min) * math.sqrt(math.log1p(t_max / time))


def reconstructable(event: Event, min_hits: int = 3) -> dict[int, list[int]]:
    """Primary particle id -> hit ids, for primaries leaving at least ``min_hits`` hits."""
    primaries = _primary_ids(event)
    hbp = event.hits_by_particle
    out = {}
    for pid in sorted(primaries):
        hs = hbp.get(pid, [])
        if len(hs) >= min_hits and hs:
            out[pid] = hs
    return out


def particle_efficiency(event: Event, solution: Solution, min_hits: int = 3) -> tuple[float, dict[int, bool]]:
    """Fraction of primaries with some track holding more than half their hits.

    Only primaries with at least ``min_hits`` hits are counted (``min_hits=1``
    counts every primary that left a hit). Returns the efficiency (0 when no
    particle qualifies) and the per-particle flags.
    """
    _require_truth(event)
    flags = {}
    for pid, hs in reconstructable(event, min_hits).items():
        counts = Counter(solution.assignment.get(h, 0) for h in hs)
        counts.pop(0, None)
        best = max(counts.values(), default=0)
        flags[pid] = 2 * best > len(hs)
    if not flags:
        return 0.0, flags
    return sum(flags.values()) / len(flags), flags


# ------------------------------------------------------------- binned tables

@dataclass(frozen=True)
class EfficiencyBin:
    bin_low: float
    bin_high: float
    charge: str  # "all", "+", "-", "same" or "opposite"
    matched: int
    total: int

    @property
    def efficiency(self) -> float | None:
        return self.matched / self.total if self.total else None

    @property
    def uncertainty(self) -> float:
        e = self.efficiency
        return 0.0 if e is None else math.sqrt(e * (1.0 - e) / self.total)


@dataclass(frozen=True)
class EfficiencyTable:
    variable: str
    edges: tuple[float, ...]
    bins: tuple[EfficiencyBin, ...]

    def rows(self) -> list[dict]:
        return [{
            "variable": self.variable, "bin_low": b.bin_low, "bin_high": b.bin_high, "charge": b.charge,
            "matched": b.matched, "total": b.total, "efficiency": b.efficiency, "uncertainty": b.uncertainty,
        } for b in self.bins]


def _check_edges(bins: Sequence[float]) -> tuple[float, ...]:
    edges = tuple(float(b) for b in bins)
    if len(edges) < 2 or any(not b > a for a, b in zip(edges, edges[1:])):
        raise ValidationError("bin edges must be strictly increasing with at least two entries")
    return edges


def _bin_index(edges: Sequence[float], v: float) -> int | None:
    """Half-open bins, the last one closed on the right."""
    if not edges[0] <= v <= edges[-1]:
        return None
    lo, hi = 0, len(edges) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if v < edges[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def particle_variable(p: Particle, variable: str) -> float:
    k = kinematics(p)
    if variable == "log10_pt":
        return math.log10(k.pt)
    if variable in ("phi", "eta", "r0", "z0"):
        return getattr(k, variable)
    raise ValidationError(f"unknown variable {variable!r}; choose from {', '.join(VARIABLES)}")


def _table(variable, edges, samples, groups) -> EfficiencyTable:
    matched = {g: [0] * (len(edges) - 1) for g in groups}
    total = {g: [0] * (len(edges) - 1) for g in groups}
    for value, group, ok in samples:
        i = _bin_index(edges, value)
        if i is None:
            continue
        total[group][i] += 1
        matched[group][i] += int(ok)
    bins = tuple(EfficiencyBin(edges[i], edges[i + 1], g, matched[g][i], total[g][i])
                 for g in groups for i in range(len(edges) - 1))
    return EfficiencyTable(variable, edges, bins)


def binned_efficiency(events: Sequence[Event], solutions: Sequence[Solution], variable: str,
                      bins: Sequence[float], charge_split: bool = False, min_hits: int = 3) -> EfficiencyTable:
    """Particle efficiency per bin of a truth variable, optionally split by charge."""
    if variable not in VARIABLES:
        raise ValidationError(f"unknown variable {variable!r}; choose from {', '.join(VARIABLES)}")
    edges = _check_edges(bins)
    samples = []
    for ev, sol in zip(events, solutions, strict=True):
        _, flags = particle_efficiency(ev, sol, min_hits)
        pidx = ev.particle_index
        for pid, ok in flags.items():
            p = pidx[pid]
            group = ("+" if p.q > 0 else "-") if charge_split else "all"
            samples.append((particle_variable(p, variable), group, ok))
    return _table(variable, edges, samples, ("+", "-") if charge_split else ("all",))


def delta_r_nearest(event: Event) -> dict[int, tuple[float, bool]]:
    """Per primary: distance in (phi, eta) to the nearest other primary and
    whether that neighbour has the same charge."""
    prim = [p for p in event.particles if not p.is_secondary]
    if len(prim) < 2:
        raise ValidationError(f"event {event.event_id}: need at least two primaries")
    kin = [kinematics(p) for p in prim]
    out = {}
    for i, p in enumerate(prim):
        best, same = math.inf, False
        for j, q in enumerate(prim):
            if i == j:
                continue
            d = math.hypot(wrap_angle(kin[i].phi - kin[j].phi), kin[i].eta - kin[j].eta)
            if d < best:
                best, same = d, p.q == q.q
        out[p.particle_id] = (best, same)
    return out


def delta_r_efficiency(events: Sequence[Event], solutions: Sequence[Solution], bins: Sequence[float],
                       min_hits: int = 3) -> EfficiencyTable:
    """Efficiency versus nearest-neighbour distance, split by same/opposite charge of the neighbour."""
    edges = _check_edges(bins)
    samples = []
    for ev, sol in zip(events, solutions, strict=True):
        _, flags = particle_efficiency(ev, sol, min_hits)
        dr = delta_r_nearest(ev)
        for pid, ok in flags.items():
            d, same = dr[pid]
            samples.append((d, "same" if same else "opposite", ok))
    return _table("delta_r", edges, samples, ("same", "opposite"))


def write_tables(tables: Iterable[EfficiencyTable], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for table in tables:
            for row in table.rows():
                row["efficiency"] = "" if row["efficiency"] is None else row["efficiency"]
                w.writerow(row)


# ------------------------------------------------------------------ reports

@dataclass
class ScoreReport:
    """Accuracy, timing and throughput over a set of events.

    ``time`` is the mean finder time per event in seconds (None when no
    timing is known, in which case ``throughput`` is None too).
    """

    accuracy: float
    per_event: dict[int, float]
    time: float | None
    throughput: float | None
    n_events: int
    valid: bool = True
    repetition_times: list[float] = field(default_factory=list)
    spread: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_event"] = {str(k): v for k, v in self.per_event.items()}
        return d


def score_events(events: Sequence[Event], solutions: Mapping[int, Solution] | Sequence[Solution],
                 time: float | None = None, double_majority: bool = False,
                 t_max: float = T_MAX, s_min: float = S_MIN) -> ScoreReport:
    """Mean accuracy over events, and the throughput score if ``time`` is given."""
    if not isinstance(solutions, Mapping):
        solutions = {s.event_id: s for s in solutions}
    per_event = {}
    for ev in events:
        if ev.event_id not in solutions:
            raise ValidationError(f"no solution for event {ev.event_id}")
        per_event[ev.event_id] = accuracy_score(ev, solutions[ev.event_id], double_majority)
    s = sum(per_event.values()) / len(per_event) if per_event else 0.0
    thr = None if time is None else throughput_score(s, time, t_max, s_min)
    return ScoreReport(s, per_event, time, thr, len(per_event))
