"""Multi-pass combinatorial track finder.

Each pass builds a (phi, t) grid per layer from the hits still unassigned,
seeds three-hit tracklets on its base layers, prolongs every tracklet through
the detector (outward, then inward) with branching on ambiguous layers,
greedily selects the best candidates and removes their hits before the next
pass.
"""
from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import DomainError, ValidationError
from .event_model import Event, Solution
from .geometry import DEFAULT_TOLERANCE, Detector, LayerKey, surface_coords
from .helix import INTERIOR, ThreeHitHelix, fit_xyz, project_line
from .layer_grid import GridHit, LayerGrid, ScanIndex, linear_scan
from .schedule import PassConfig, Schedule

ORIGIN = GridHit(0.0, 0.0, 0.0, 0.0, 0.0, 0)


@dataclass
class Tracklet:
    hits: tuple[GridHit, ...]  # real hits, 2 for origin seeds
    helix: ThreeHitHelix
    z_residual: float
    origin: bool = False


@dataclass
class TrackCandidate:
    hit_ids: list[int]
    deviations: dict[int, float]
    helix: ThreeHitHelix
    n_missing: int

    @property
    def mean_deviation(self) -> float:
        return sum(self.deviations[h] for h in self.hit_ids) / len(self.hit_ids)


@dataclass(frozen=True)
class Track:
    track_id: int
    hit_ids: tuple[int, ...]
    pass_index: int


@dataclass
class PreparedEvent:
    """Event hits in grid form, grouped by layer, computed once per event."""

    event_id: int
    detector: Detector
    layer_hits: dict[LayerKey, list[GridHit]]
    hit_ids: list[int]

    @classmethod
    def from_event(cls, event: Event, detector: Detector, tolerance: float = DEFAULT_TOLERANCE) -> "PreparedEvent":
        layer_hits: dict[LayerKey, list[GridHit]] = {k: [] for k in detector.keys}
        for h in event.hits:
            key = (h.volume_id, h.layer_id)
            if key not in layer_hits:
                raise ValidationError(f"hit {h.hit_id} is on unknown layer {key}")
            surf = detector.layer(key)
            phi, t = surface_coords(h, surf, tolerance)
            layer_hits[key].append(GridHit(
                phi, t, h.x, h.y, h.z, h.hit_id,
                detector.field_at(key, t, "seed"),
                detector.field_at(key, t, "inward"),
                detector.field_at(key, t, "outward"),
            ))
        return cls(event.event_id, detector, layer_hits, [h.hit_id for h in event.hits])


# ------------------------------------------------------------------ indexes

def build_indexes(prepared: PreparedEvent, alive: set[int], cfg: PassConfig, mode: str = "grid"):
    """Per-layer search structures over surviving hits."""
    cells = cfg.cell_sizes(prepared.detector.keys)
    out = {}
    for key, hits in prepared.layer_hits.items():
        surv = [h for h in hits if h.hit_id in alive]
        if mode == "grid":
            out[key] = LayerGrid.build(surv, cells[key], prepared.detector.layer(key).t_range)
        elif mode == "scan":
            out[key] = ScanIndex(surv, cells[key])
        else:
            raise ValueError(f"unknown index mode {mode!r}")
    return out


def _survivors(prepared: PreparedEvent, alive: set[int], key: LayerKey) -> list[GridHit]:
    return [h for h in prepared.layer_hits[key] if h.hit_id in alive]


# --------------------------------------------------------------- tracklets

def _make_tracklet(h1: GridHit, h2: GridHit, h3: GridHit, cfg: PassConfig, origin: bool):
    try:
        hx = fit_xyz(h1.x, h1.y, h1.z, h2.x, h2.y, h2.z, h3.x, h3.y, h3.z, h2.bz_seed)
    except DomainError:
        return None
    if hx.s1 >= 0.0 or hx.s3 <= 0.0:
        return None
    zres = abs(hx.z2 + hx.dzds * hx.s1 - h1.z)
    if zres > cfg.z_residual_cut:
        return None
    if cfg.min_pt > 0.0 and hx.k != 0.0 and 0.3e-3 * abs(h2.bz_seed) / abs(hx.k) < cfg.min_pt:
        return None
    return Tracklet((h2, h3) if origin else (h1, h2, h3), hx, zres, origin)


def construct_tracklets(cfg: PassConfig, indexes, detector: Detector, first_hits: Sequence[GridHit]) -> list[Tracklet]:
    """Seed tracklets from the given hits on the first combinatorial layer.

    Three-layer mode: hit1 loops over ``first_hits``; the origin line through
    hit1 predicts hit2, the hit1-hit2 line predicts hit3. Origin mode: hit1
    is the origin and ``first_hits`` play the role of hit2.
    """
    base = [detector.layer(k) for k in cfg.base_layers]
    out: list[Tracklet] = []
    w2, w3 = cfg.window_l2, cfg.window_l3
    if cfg.use_origin_seed:
        idx3 = indexes[cfg.base_layers[1]]
        for h2 in first_hits:
            p = project_line(0.0, 0.0, 0.0, h2.x, h2.y, h2.z, base[1], 0.5 * w3[1])
            if p is None:
                continue
            for h3 in sorted(idx3.query(p[0], p[1], w3), key=_hid):
                tr = _make_tracklet(ORIGIN, h2, h3, cfg, True)
                if tr is not None:
                    out.append(tr)
        return out
    idx2 = indexes[cfg.base_layers[1]]
    idx3 = indexes[cfg.base_layers[2]]
    for h1 in first_hits:
        p = project_line(0.0, 0.0, 0.0, h1.x, h1.y, h1.z, base[1], 0.5 * w2[1])
        if p is None:
            continue
        for h2 in sorted(idx2.query(p[0], p[1], w2), key=_hid):
            p3 = project_line(h1.x, h1.y, h1.z, h2.x, h2.y, h2.z, base[2], 0.5 * w3[1])
            if p3 is None:
                continue
            for h3 in sorted(idx3.query(p3[0], p3[1], w3), key=_hid):
                tr = _make_tracklet(h1, h2, h3, cfg, False)
                if tr is not None:
                    out.append(tr)
    return out


def brute_force_tracklets(cfg: PassConfig, layer_hits: dict[LayerKey, list[GridHit]], detector: Detector,
                          first_hits: Sequence[GridHit]) -> list[Tracklet]:
    """Grid-free reference: every hit combination on the base layers,
    filtered by the same windows and cuts."""
    base = [detector.layer(k) for k in cfg.base_layers]
    out: list[Tracklet] = []
    w2, w3 = cfg.window_l2, cfg.window_l3

    def inside(h, p, w):
        return (abs(math.remainder(h.phi - p[0], 2 * math.pi)) <= 0.5 * w[0]
                and abs(h.t - p[1]) <= 0.5 * w[1])

    if cfg.use_origin_seed:
        for h2 in first_hits:
            p = project_line(0.0, 0.0, 0.0, h2.x, h2.y, h2.z, base[1], 0.5 * w3[1])
            for h3 in layer_hits[cfg.base_layers[1]]:
                if p is None or not inside(h3, p, w3):
                    continue
                tr = _make_tracklet(ORIGIN, h2, h3, cfg, True)
                if tr is not None:
                    out.append(tr)
        return out
    for h1 in first_hits:
        p = project_line(0.0, 0.0, 0.0, h1.x, h1.y, h1.z, base[1], 0.5 * w2[1])
        for h2 in layer_hits[cfg.base_layers[1]]:
            if p is None or not inside(h2, p, w2):
                continue
            p3 = project_line(h1.x, h1.y, h1.z, h2.x, h2.y, h2.z, base[2], 0.5 * w3[1])
            for h3 in layer_hits[cfg.base_layers[2]]:
                if p3 is None or not inside(h3, p3, w3):
                    continue
                tr = _make_tracklet(h1, h2, h3, cfg, False)
                if tr is not None:
                    out.append(tr)
    return out


def _hid(h: GridHit) -> int:
    return h.hit_id


# -------------------------------------------------------------- prolongation

def _offsets(h: GridHit, c) -> tuple[float, float, float]:
    """(dphi, dt, distance in mm) of hit ``h`` from crossing or hit ``c``.

    dphi comes from the Cartesian coordinates so overlap copies (whose
    stored phi is shifted by 2pi) give bit-identical results.
    """
    dphi = math.atan2(h.x * c.y - h.y * c.x, h.x * c.x + h.y * c.y)
    dt = h.t - c.t
    r = math.hypot(c.x, c.y)
    return dphi, dt, math.hypot(r * dphi, dt)


class _State:
    """One branch of a prolongation.

    ``main`` holds one hit per visited layer in trajectory order, led by the
    origin pseudo-hit while fewer than three real hits are known. Pickup
    hits only appear in ``devs``. ``run_missing`` counts missing layers in
    the current direction, ``n_missing`` over the whole candidate.
    """

    __slots__ = ("main", "devs", "visited", "n_missing", "run_missing", "outward", "helix")

    def __init__(self, main, devs, visited, n_missing, run_missing, outward, helix):
        self.main = main
        self.devs = devs
        self.visited = visited
        self.n_missing = n_missing
        self.run_missing = run_missing
        self.outward = outward
        self.helix = helix

    def copy(self) -> "_State":
        return _State(list(self.main), dict(self.devs), set(self.visited),
                      self.n_missing, self.run_missing, self.outward, self.helix)

    def start(self):
        """Local helix at the extrapolation start in the current direction."""
        hx = self.helix
        if self.outward:
            return hx.local(hx.s3, self.main[-1].bz_out)
        first = self.main[0]
        if first is ORIGIN:
            return hx.local(0.0, self.main[1].bz_in)
        return hx.local(hx.s1, first.bz_in)

    def turn_inward(self) -> None:
        self.outward = False
        self.run_missing = 0
        if self.main[0] is ORIGIN:
            return
        if len(self.main) > 3:
            fitted = _fit(self.main[0], self.main[1], self.main[2])
            if fitted is not None:
                self.helix = fitted

    def add(self, hit: GridHit) -> None:
        main = self.main
        if self.outward:
            fitted = _fit(main[-2], main[-1], hit)
            if main[0] is ORIGIN:
                del main[0]
            main.append(hit)
        else:
            if main[0] is ORIGIN:
                del main[0]
            fitted = _fit(hit, main[0], main[1])
            main.insert(0, hit)
        if fitted is not None:
            self.helix = fitted


def _fit(a: GridHit, b: GridHit, c: GridHit):
    try:
        hx = fit_xyz(a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z, b.bz_seed)
    except DomainError:
        return None
    return hx if hx.s1 < 0.0 < hx.s3 else None


def _ellipse(h: GridHit, cross, wphi: float, wt: float) -> float:
    dphi, dt, _ = _offsets(h, cross)
    return (dphi / wphi) ** 2 + (dt / wt) ** 2


def _pickups(index, chosen: GridHit, window) -> list[GridHit]:
    phi = math.atan2(chosen.y, chosen.x)
    if phi == -math.pi:
        phi = math.pi
    return sorted((h for h in index.query(phi, chosen.t, window) if h.hit_id != chosen.hit_id), key=_hid)


def prolong(tracklet: Tracklet, cfg: PassConfig, indexes, detector: Detector) -> list[TrackCandidate]:
    """Grow one tracklet into track candidates.

    Layers are visited in the order the trajectory crosses them: outward
    from the outermost hit, then inward from the innermost one. At each
    crossing the closest in-window hit (elliptical distance in window units,
    ties to the lower hit id) is added and the helix re-fit on the last
    three layers. Hits within the pickup window around it are attached
    without a re-fit. Every other in-window hit opens a branch while the
    tracklet's branch budget lasts. An empty window at an interior crossing
    counts as a missing layer; the direction ends once the count exceeds
    the limit.
    """
    layers = detector.layers
    devs = {h.hit_id: 0.0 for h in tracklet.hits}
    if not tracklet.origin:
        devs[tracklet.hits[0].hit_id] = tracklet.z_residual
    for h, key in zip(tracklet.hits, cfg.base_layers[-len(tracklet.hits):]):
        for extra in _pickups(indexes[key], h, cfg.pickup_window):
            if extra.hit_id not in devs:
                devs[extra.hit_id] = _offsets(extra, h)[2]
    main = [ORIGIN, *tracklet.hits] if tracklet.origin else list(tracklet.hits)
    root = _State(main, devs, set(cfg.base_layers), 0, 0, True, tracklet.helix)
    stack: list[tuple[_State, tuple | None]] = [(root, None)]
    budget = cfg.max_branches
    margin = cfg.edge_margin
    results: list[TrackCandidate] = []

    while stack:
        st, forced = stack.pop()
        while True:
            if forced is not None:
                key, cross, chosen = forced
                forced = None
            else:
                lh = st.start()
                cross = key = None
                for surf in layers:
                    if surf.key in st.visited:
                        continue
                    c = lh.crossing(surf, st.outward, margin)
                    if c is not None and (cross is None or abs(c.s) < abs(cross.s)):
                        cross, key = c, surf.key
                if cross is None:
                    if st.outward:
                        st.turn_inward()
                        continue
                    break
                st.visited.add(key)
                window = cfg.window_for(key)
                found = indexes[key].query(cross.phi, cross.t, window)
                if not found:
                    if cross.kind == INTERIOR:
                        st.n_missing += 1
                        st.run_missing += 1
                        if st.run_missing > cfg.max_missing_layers:
                            if st.outward:
                                st.turn_inward()
                                continue
                            break
                    continue
                wphi, wt = window
                ranked = sorted(found, key=lambda h: (_ellipse(h, cross, wphi, wt), h.hit_id))
                chosen = ranked[0]
                if budget > 0 and len(ranked) > 1:
                    picked = {h.hit_id for h in _pickups(indexes[key], chosen, cfg.pickup_window)}
                    for alt in ranked[1:]:
                        if budget <= 0:
                            break
                        if alt.hit_id in picked or alt.hit_id in st.devs:
                            continue
                        budget -= 1
                        stack.append((st.copy(), (key, cross, alt)))
            if chosen.hit_id in st.devs:
                continue
            st.devs[chosen.hit_id] = _offsets(chosen, cross)[2]
            for h in _pickups(indexes[key], chosen, cfg.pickup_window):
                if h.hit_id not in st.devs:
                    st.devs[h.hit_id] = _offsets(h, chosen)[2]
            st.add(chosen)
        if len(st.devs) >= cfg.min_hits:
            ids = sorted(st.devs)
            results.append(TrackCandidate(ids, st.devs, st.helix, st.n_missing))
    return results


# ----------------------------------------------------------------- selection

def select(candidates: Sequence[TrackCandidate], cfg: PassConfig, first_track_id: int = 1,
           pass_index: int = 0) -> tuple[list[Track], set[int]]:
    """Greedy selection of disjoint tracks.

    Repeatedly accepts the candidate with the most hits (then lowest mean
    deviation, then lowest hit id, then lexicographic hit list), removes its
    hits from every other candidate and drops candidates left with fewer
    than ``min_hits``. Stops when the best has fewer than
    ``selection_min_hits``. Returns the tracks and the set of used hits.
    """
    hits = [set(c.hit_ids) for c in candidates]
    devs = [c.deviations for c in candidates]
    version = [0] * len(candidates)
    by_hit: dict[int, list[int]] = {}
    for i, hs in enumerate(hits):
        for h in hs:
            by_hit.setdefault(h, []).append(i)

    def key(i):
        hs = hits[i]
        srt = tuple(sorted(hs))
        return (-len(hs), sum(devs[i][h] for h in srt) / len(srt), srt[0], srt)

    heap = [(key(i), i, 0) for i in range(len(candidates)) if len(hits[i]) >= cfg.min_hits]
    heapq.heapify(heap)
    used: set[int] = set()
    tracks: list[Track] = []
    alive = [len(h) >= cfg.min_hits for h in hits]
    while heap:
        k, i, ver = heapq.heappop(heap)
        if not alive[i] or ver != version[i]:
            continue
        if len(hits[i]) < cfg.selection_min_hits:
            break
        accepted = k[3]
        tracks.append(Track(first_track_id + len(tracks), accepted, pass_index))
        alive[i] = False
        used.update(accepted)
        touched = set()
        for h in accepted:
            for j in by_hit.get(h, ()):
                if j != i and alive[j] and h in hits[j]:
                    hits[j].discard(h)
                    touched.add(j)
        for j in sorted(touched):
            version[j] += 1
            if len(hits[j]) < cfg.min_hits:
                alive[j] = False
            else:
                heapq.heappush(heap, (key(j), j, version[j]))
    return tracks, used


# ---------------------------------------------------------------------- run

@dataclass
class RunResult:
    solution: Solution
    tracks: list[Track]
    pass_stats: list[dict] = field(default_factory=list)


def _chunks(seq: Sequence, n: int) -> list[Sequence]:
    n = max(1, min(n, len(seq))) if seq else 1
    size, rem = divmod(len(seq), n)
    out, start = [], 0
    for i in range(n):
        stop = start + size + (1 if i < rem else 0)
        out.append(seq[start:stop])
        start = stop
    return out


def run_pass(prepared: PreparedEvent, alive: set[int], cfg: PassConfig, pass_index: int = 0,
             first_track_id: int = 1, workers: int = 1, mode: str = "grid",
             executor: ThreadPoolExecutor | None = None) -> tuple[list[Track], dict]:
    """One pass over the surviving hits; returns accepted tracks and stats."""
    det = prepared.detector
    indexes = build_indexes(prepared, alive, cfg, mode)
    first = _survivors(prepared, alive, cfg.base_layers[0])

    if mode == "scan":
        layer_surv = {k: _survivors(prepared, alive, k) for k in cfg.base_layers}

        def work(part):
            trs = brute_force_tracklets(cfg, layer_surv, det, part)
            return trs, [c for tr in trs for c in prolong(tr, cfg, indexes, det)]
    else:
        def work(part):
            trs = construct_tracklets(cfg, indexes, det, part)
            return trs, [c for tr in trs for c in prolong(tr, cfg, indexes, det)]

    parts = _chunks(first, workers)
    if executor is not None and len(parts) > 1:
        results = list(executor.map(work, parts))
    else:
        results = [work(p) for p in parts]
    n_tracklets = sum(len(r[0]) for r in results)
    candidates = [c for r in results for c in r[1]]
    tracks, used = select(candidates, cfg, first_track_id, pass_index)
    stats = {"pass": pass_index, "name": cfg.name, "tracklets": n_tracklets,
             "candidates": len(candidates), "tracks": len(tracks), "hits_used": len(used)}
    return tracks, stats


def run_detailed(event: Event, detector: Detector, schedule: Schedule, workers: int = 1,
                 mode: str = "grid", tolerance: float = DEFAULT_TOLERANCE,
                 prepared: PreparedEvent | None = None) -> RunResult:
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    schedule.check_against(detector)
    prepared = prepared or PreparedEvent.from_event(event, detector, tolerance)
    alive = set(prepared.hit_ids)
    tracks: list[Track] = []
    stats = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for i, cfg in enumerate(schedule):
            new, st = run_pass(prepared, alive, cfg, i, len(tracks) + 1, workers, mode, executor)
            for t in new:
                alive.difference_update(t.hit_ids)
            tracks.extend(new)
            stats.append(st)
    finally:
        if executor is not None:
            executor.shutdown()
    assignment = {hid: 0 for hid in prepared.hit_ids}
    for t in tracks:
        for h in t.hit_ids:
            assignment[h] = t.track_id
    return RunResult(Solution(event.event_id, assignment), tracks, stats)


def run(event: Event, detector: Detector, schedule: Schedule, workers: int = 1, mode: str = "grid",
        tolerance: float = DEFAULT_TOLERANCE) -> Solution:
    """Reconstruct one event; accepted tracks are numbered 1..N in acceptance order."""
    return run_detailed(event, detector, schedule, workers, mode, tolerance).solution


def run_reference(event: Event, detector: Detector, schedule: Schedule) -> Solution:
    """Grid-free reference finder: brute-force seeding and linear-scan windows."""
    return run(event, detector, schedule, workers=1, mode="scan")
