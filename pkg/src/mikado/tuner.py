"""Per-pass parameter tuning and field-map fitting on training events.

Parameters are addressed by path: a field name (``z_residual_cut``), a
window component (``window_l3.0`` is the phi width) or a per-layer window
component (``layer_windows.8:2.1``).
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .event_model import Event
from .finder import PreparedEvent, Track, run_pass
from .geometry import Cylinder, Detector, LayerField, LayerKey, surface_coords
from .helix import LORENTZ, fit_xyz
from .schedule import PassConfig, Schedule

DEFAULT_PARAMS = ("window_l2.0", "window_l2.1", "window_l3.0", "window_l3.1", "z_residual_cut")
WINDOW_FIELDS = ("window_l2", "window_l3", "default_window", "pickup_window")


def get_param(cfg: PassConfig, path: str) -> float:
    head, _, rest = path.partition(".")
    if head in WINDOW_FIELDS:
        return getattr(cfg, head)[int(rest)]
    if head == "layer_windows":
        key, _, comp = rest.rpartition(".")
        v, l = key.split(":")
        return cfg.window_for((int(v), int(l)))[int(comp)]
    value = getattr(cfg, head, None)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValidationError(f"{path!r} is not a scalar pass parameter")
    return float(value)


def set_param(cfg: PassConfig, path: str, value: float) -> PassConfig:
    """Copy of ``cfg`` with one parameter changed; raises ValidationError if invalid."""
    head, _, rest = path.partition(".")
    if head in WINDOW_FIELDS:
        w = list(getattr(cfg, head))
        w[int(rest)] = value
        return cfg.replace(**{head: tuple(w)})
    if head == "layer_windows":
        key, _, comp = rest.rpartition(".")
        v, l = key.split(":")
        k = (int(v), int(l))
        w = list(cfg.window_for(k))
        w[int(comp)] = value
        lw = dict(cfg.layer_windows)
        lw[k] = tuple(w)
        return cfg.replace(layer_windows=lw)
    old = getattr(cfg, head, None)
    if isinstance(old, bool) or not isinstance(old, (int, float)):
        raise ValidationError(f"{path!r} is not a scalar pass parameter")
    return cfg.replace(**{head: type(old)(round(value) if isinstance(old, int) else value)})


# ---------------------------------------------------------------- criterion

def pass_outcome(event: Event, tracks: Sequence[Track]) -> tuple[int, int]:
    """(matched tracks, wrongly assigned hits) for one pass's tracks.

    A track is matched when a single primary holds more than half its hits
    and the track holds more than half of that particle's hits. Hits of any
    other particle (or noise) in a track are wrongly assigned.
    """
    truth = event.truth_by_hit
    pidx = event.particle_index
    hbp = event.hits_by_particle
    matched = wrong = 0
    for t in tracks:
        counts = Counter(truth[h].particle_id for h in t.hit_ids)
        pid, n = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
        wrong += len(t.hit_ids) - n if pid != 0 else len(t.hit_ids)
        if pid != 0 and not pidx[pid].is_secondary and 2 * n > len(t.hit_ids) and 2 * n > len(hbp[pid]):
            matched += 1
    return matched, wrong


@dataclass
class TuneResult:
    config: PassConfig
    value: float
    iterations: int
    history: list[tuple[str, float, float]] = field(default_factory=list)  # (param, value, criterion)


class PassObjective:
    """Criterion ``w_n * matched - w_p * wrong`` of one pass on training events,
    run after the schedule's earlier passes."""

    def __init__(self, schedule: Schedule, pass_index: int, events: Sequence[Event], detector: Detector,
                 weights: tuple[float, float] = (1.0, 1.0)):
        self.weights = weights
        self.pass_index = pass_index
        self.setups = []
        for ev in events:
            prep = PreparedEvent.from_event(ev, detector)
            alive = set(prep.hit_ids)
            for i in range(pass_index):
                tracks, _ = run_pass(prep, alive, schedule[i], i)
                for t in tracks:
                    alive.difference_update(t.hit_ids)
            self.setups.append((ev, prep, alive))

    def __call__(self, cfg: PassConfig) -> float:
        wn, wp = self.weights
        total = 0.0
        for ev, prep, alive in self.setups:
            tracks, _ = run_pass(prep, set(alive), cfg, self.pass_index)
            m, w = pass_outcome(ev, tracks)
            total += wn * m - wp * w
        return total


def hill_climb(cfg: PassConfig, objective: Callable[[PassConfig], float], params: Sequence[str] = DEFAULT_PARAMS,
               step: float = 0.5, max_iters: int = 50, min_step: float = 1e-3) -> TuneResult:
    """Coordinate-wise multiplicative hill climb.

    One iteration tries ``p * (1 + step)`` and ``p * (1 - step)`` for one
    parameter and moves to the better one if it strictly improves the
    objective. After a sweep over all parameters with no move the step is
    halved. Stops after ``max_iters`` iterations or when the step drops
    below ``min_step``.
    """
    best = objective(cfg)
    history = []
    iters = 0
    while iters < max_iters and step >= min_step:
        moved = False
        for path in params:
            if iters >= max_iters:
                break
            iters += 1
            p = get_param(cfg, path)
            trial = None
            for value in (p * (1.0 + step), p * (1.0 - step)):
                try:
                    c = set_param(cfg, path, value)
                except ValidationError:
                    continue
                v = objective(c)
                if v > best and (trial is None or v > trial[1]):
                    trial = (c, v, value)
            if trial is not None:
                cfg, best = trial[0], trial[1]
                history.append((path, trial[2], best))
                moved = True
        if not moved:
            step *= 0.5
    return TuneResult(cfg, best, iters, history)


def tune_pass(cfg: PassConfig, train_events: Sequence[Event], criterion_weights: tuple[float, float] = (1.0, 1.0),
              *, detector: Detector | None = None, schedule: Schedule | None = None, pass_index: int = 0,
              params: Sequence[str] = DEFAULT_PARAMS, objective: Callable[[PassConfig], float] | None = None,
              step: float = 0.5, max_iters: int = 50, min_step: float = 1e-3) -> TuneResult:
    """Tune one pass.

    Unless a custom ``objective`` is given, the criterion is measured on
    ``train_events`` after running passes ``0..pass_index-1`` of
    ``schedule``.
    """
    if objective is None:
        if detector is None:
            raise ValidationError("tune_pass needs a detector unless an objective is given")
        schedule = schedule or Schedule((cfg,))
        objective = PassObjective(schedule, pass_index, train_events, detector, criterion_weights)
    return hill_climb(cfg, objective, params, step, max_iters, min_step)


# -------------------------------------------------------------- field maps

def field_samples(events: Sequence[Event], detector: Detector) -> dict[LayerKey, list[tuple[float, float]]]:
    """(t, Bz) samples per layer from truth.

    Each run of three consecutive hits (distinct layers) of a primary gives
    a circle radius; with the particle's true pT it yields the field at the
    middle hit.
    """
    out: dict[LayerKey, list[tuple[float, float]]] = defaultdict(list)
    for ev in events:
        hi = ev.hit_index
        pidx = ev.particle_index
        for pid, hids in ev.hits_by_particle.items():
            p = pidx[pid]
            if p.is_secondary:
                continue
            hs = sorted((hi[h] for h in hids), key=lambda h: (h.x * h.x + h.y * h.y, abs(h.z)))
            seen, chain = set(), []
            for h in hs:
                if h.layer_key not in seen:
                    seen.add(h.layer_key)
                    chain.append(h)
            for a, b, c in zip(chain, chain[1:], chain[2:]):
                try:
                    hx = fit_xyz(a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z)
                except ValidationError:
                    continue
                if hx.k == 0.0:
                    continue
                surf = detector.layer(b.layer_key)
                t = b.z if isinstance(surf, Cylinder) else math.hypot(b.x, b.y)
                out[b.layer_key].append((t, p.pt * abs(hx.k) / LORENTZ))
    return dict(out)


def fit_layer_fields(events: Sequence[Event], detector: Detector, degree: int = 1,
                     default_bz: float = 2.0) -> dict[LayerKey, LayerField]:
    """Least-squares polynomial Bz(t) per layer.

    Layers with too few samples (the innermost layer is never the middle of
    a triplet) get the mean of all samples, or ``default_bz`` when there
    are none.
    """
    samples = field_samples(events, detector)
    every = [bz for pts in samples.values() for _, bz in pts]
    fallback = float(np.mean(every)) if every else default_bz
    out = {}
    for key in detector.keys:
        pts = samples.get(key, [])
        if len(pts) <= degree:
            out[key] = LayerField.uniform(key, fallback)
            continue
        t, b = np.array(pts).T
        coeffs = np.polynomial.polynomial.polyfit(t, b, degree)
        c = tuple(float(x) for x in coeffs)
        out[key] = LayerField(key, {"seed": c, "inward": c, "outward": c})
    return out
