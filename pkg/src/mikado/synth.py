"""Seedable synthetic events with exact truth.

Particles follow exact helices in a uniform solenoid field. Every layer the
helix crosses (first crossing only, up to the point of closest return)
yields a hole, one hit or a duplicate pair, smeared in the surface tangent
plane. Noise hits are spread uniformly over random layers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .event_model import Event, Hit, Particle, Solution, TruthLink
from .geometry import Cylinder, Detector, Subdetector, default_detector
from .helix import LORENTZ, LocalHelix

DEFAULT_SIGMA = {
    Subdetector.PIXEL: 0.01,
    Subdetector.SHORT_STRIP: 0.05,
    Subdetector.LONG_STRIP: 0.1,
}


@dataclass(frozen=True)
class GenConfig:
    """Generator settings. Lengths in mm, momenta in GeV, field in T.

    ``min_weighted_hits``: hits of primaries leaving fewer hits than this get
    weight 0, so particles too short to reconstruct do not enter the score.
    ``endpoint_weight`` > 1 up-weights each primary's first and last hit.
    """

    n_primaries: int = 100
    pt_range: tuple[float, float] = (0.15, 10.0)
    eta_range: tuple[float, float] = (-3.0, 3.0)
    beamspot_sigma_z: float = 55.0
    xy_vertex_sigma: float = 0.01
    hit_sigma: Mapping[Subdetector, float] = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    duplicate_prob: float = 0.1
    noise_fraction: float = 0.05
    secondary_fraction: float = 0.05
    secondary_r0_max: float = 200.0
    hole_prob: float = 0.02
    rng_seed: int = 0
    bz: float = 2.0
    min_weighted_hits: int = 3
    endpoint_weight: float = 1.0

    def __post_init__(self):
        for name in ("duplicate_prob", "noise_fraction", "secondary_fraction", "hole_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.pt_range
        if not (0.0 < lo <= hi < math.inf):
            raise ValidationError(f"pt_range must satisfy 0 < low <= high < inf, got {self.pt_range}")
        if self.eta_range[0] > self.eta_range[1]:
            raise ValidationError("eta_range must be increasing")
        if self.n_primaries < 0:
            raise ValidationError("n_primaries must be >= 0")
        if min(self.beamspot_sigma_z, self.xy_vertex_sigma, self.secondary_r0_max) < 0:
            raise ValidationError("vertex spreads must be >= 0")
        sig = {Subdetector(k): float(v) for k, v in dict(self.hit_sigma).items()}
        if any(v < 0 for v in sig.values()):
            raise ValidationError("hit_sigma must be >= 0")
        object.__setattr__(self, "hit_sigma", sig)

    def noiseless(self) -> "GenConfig":
        """Same config with no smear, noise or holes."""
        return replace(self, hit_sigma={k: 0.0 for k in Subdetector}, noise_fraction=0.0, hole_prob=0.0)


def particle_helix(p: Particle, bz: float) -> LocalHelix:
    """Exact trajectory of a particle: curvature -q*Bz*0.3e-3/pT (1/mm), positive counter-clockwise."""
    pt = p.pt
    k = -p.q * bz * LORENTZ / pt if bz != 0.0 else 0.0
    return LocalHelix(p.vx, p.vy, p.vz, p.px / pt, p.py / pt, k, p.pz / pt)


def layer_crossings(helix: LocalHelix, detector: Detector):
    """(surface, crossing) for each layer crossed on the outgoing leg, in traversal order."""
    out = []
    for surf in detector.layers:
        c = helix.crossing(surf, True, 0.0)
        if c is not None:
            out.append((c.s, surf, c))
    out.sort(key=lambda e: e[0])
    return [(surf, c) for _, surf, c in out]


def _smear(surf, x, y, z, sigma, rng):
    if sigma == 0.0:
        return x, y, z
    if isinstance(surf, Cylinder):
        phi = math.atan2(y, x) + rng.normal(0.0, sigma) / surf.radius
        return surf.radius * math.cos(phi), surf.radius * math.sin(phi), z + rng.normal(0.0, sigma)
    return x + rng.normal(0.0, sigma), y + rng.normal(0.0, sigma), z


def _sample_particle(cfg: GenConfig, rng, pid: int, secondary: bool) -> Particle:
    lo, hi = cfg.pt_range
    pt = math.exp(rng.uniform(math.log(lo), math.log(hi))) if hi > lo else lo
    eta = rng.uniform(*cfg.eta_range)
    phi = rng.uniform(-math.pi, math.pi)
    q = 1 if rng.random() < 0.5 else -1
    vx = rng.normal(0.0, cfg.xy_vertex_sigma)
    vy = rng.normal(0.0, cfg.xy_vertex_sigma)
    vz = rng.normal(0.0, cfg.beamspot_sigma_z)
    if secondary:
        r0 = rng.uniform(1.0, max(1.0, cfg.secondary_r0_max))
        a = rng.uniform(-math.pi, math.pi)
        vx += r0 * math.cos(a)
        vy += r0 * math.sin(a)
    return Particle(pid, vx, vy, vz, pt * math.cos(phi), pt * math.sin(phi), pt * math.sinh(eta), q, secondary)


def generate_event(cfg: GenConfig, event_id: int, detector: Detector | None = None) -> Event:
    """One event, a pure function of ``(cfg, event_id, detector)``."""
    detector = detector or default_detector(bz=cfg.bz)
    rng = np.random.default_rng([cfg.rng_seed, event_id])
    n_sec = int(round(cfg.secondary_fraction * cfg.n_primaries))
    particles = [_sample_particle(cfg, rng, i + 1, False) for i in range(cfg.n_primaries)]
    particles += [_sample_particle(cfg, rng, cfg.n_primaries + i + 1, True) for i in range(n_sec)]

    raw = []  # (x, y, z, volume, layer, particle_id)
    per_particle: dict[int, list[int]] = {}
    for p in particles:
        helix = particle_helix(p, cfg.bz)
        for surf, c in layer_crossings(helix, detector):
            if rng.random() < cfg.hole_prob:
                continue
            n = 2 if rng.random() < cfg.duplicate_prob else 1
            sigma = cfg.hit_sigma.get(surf.subdetector, 0.0)
            for _ in range(n):
                per_particle.setdefault(p.particle_id, []).append(len(raw))
                raw.append((*_smear(surf, c.x, c.y, c.z, sigma, rng), *surf.key, p.particle_id))

    n_noise = int(round(cfg.noise_fraction * len(raw)))
    layers = detector.layers
    for _ in range(n_noise):
        surf = layers[int(rng.integers(len(layers)))]
        phi = rng.uniform(-math.pi, math.pi)
        lo, hi = surf.t_range
        t = rng.uniform(lo, hi)
        raw.append((*surf.point_at(phi, t), *surf.key, 0))

    weights = [0.0] * len(raw)
    by_id = {p.particle_id: p for p in particles}
    for pid, idx in per_particle.items():
        if len(idx) < cfg.min_weighted_hits:
            continue
        for i in idx:
            weights[i] = 1.0
        if cfg.endpoint_weight != 1.0 and not by_id[pid].is_secondary:
            weights[idx[0]] = weights[idx[-1]] = cfg.endpoint_weight

    order = rng.permutation(len(raw))
    hits, truth = [], []
    for new_id, i in enumerate(order.tolist(), start=1):
        x, y, z, vol, lay, pid = raw[i]
        hits.append(Hit(new_id, float(x), float(y), float(z), vol, lay, 0))
        truth.append(TruthLink(new_id, pid, weights[i]))
    return Event(event_id, tuple(hits), tuple(particles), tuple(truth))


def ideal_solution(event: Event) -> Solution:
    """Every hit labelled with its truth particle (noise stays 0)."""
    if not event.has_truth and event.hits:
        raise ValidationError(f"event {event.event_id} has no truth")
    by_hit = event.truth_by_hit
    return Solution(event.event_id, {h.hit_id: by_hit[h.hit_id].particle_id for h in event.hits})
