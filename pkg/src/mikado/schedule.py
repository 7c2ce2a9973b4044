"""Pass parameters, schedules and their TOML files.

A schedule file holds one ``[[passes]]`` table per pass; keys match the
:class:`PassConfig` fields, layer keys are written ``"volume:layer"``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import tomli
import tomli_w

from .errors import IngestionError, ValidationError
from .geometry import Cylinder, Detector, LayerKey, default_detector
from .helix import LORENTZ, LocalHelix, project_line

Window = tuple[float, float]

MAX_WINDOW_PHI = 0.5 * math.pi


def _window(value, name) -> Window:
    try:
        dphi, dt = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name}: expected a (dphi, dt) pair, got {value!r}") from None
    if not (0 < dphi <= MAX_WINDOW_PHI) or not dt > 0:
        raise ValidationError(f"{name}: window {value!r} out of range (0 < dphi <= pi/2, dt > 0)")
    return (dphi, dt)


def _key(value) -> LayerKey:
    if isinstance(value, str):
        a, _, b = value.partition(":")
        return (int(a), int(b))
    a, b = value
    return (int(a), int(b))


@dataclass(frozen=True)
class PassConfig:
    """Everything one reconstruction pass needs.

    Windows are full widths ``(dphi [rad], dt [mm])`` centered on the
    predicted position; ``t`` is z on cylinders and r on disks.
    """

    base_layers: tuple[LayerKey, ...]
    use_origin_seed: bool = False
    window_l2: Window = (0.05, 50.0)
    window_l3: Window = (0.05, 20.0)
    layer_windows: Mapping[LayerKey, Window] = field(default_factory=dict)
    default_window: Window = (0.02, 10.0)
    pickup_window: Window = (0.004, 1.5)
    z_residual_cut: float = 1.0  # mm
    min_pt: float = 0.0  # GeV, seed triplets below are dropped
    max_missing_layers: int = 1
    min_hits: int = 3
    selection_min_hits: int = 3
    max_branches: int = 4
    edge_margin: float = 10.0  # mm
    name: str = ""

    def __post_init__(self):
        base = tuple(_key(k) for k in self.base_layers)
        if self.use_origin_seed and len(base) != 2:
            raise ValidationError("origin-seeded passes need exactly 2 base layers")
        if not self.use_origin_seed and len(base) != 3:
            raise ValidationError("passes without origin seed need exactly 3 base layers")
        if len(set(base)) != len(base):
            raise ValidationError("base layers must be distinct")
        object.__setattr__(self, "base_layers", base)
        for name in ("window_l2", "window_l3", "default_window", "pickup_window"):
            object.__setattr__(self, name, _window(getattr(self, name), name))
        object.__setattr__(self, "layer_windows",
                           {_key(k): _window(v, f"layer_windows[{k}]") for k, v in dict(self.layer_windows).items()})
        if self.min_hits < 3:
            raise ValidationError("min_hits must be at least 3")
        if self.selection_min_hits < 1 or self.max_missing_layers < 0 or self.max_branches < 0:
            raise ValidationError("selection_min_hits >= 1, max_missing_layers >= 0, max_branches >= 0 required")
        if not self.z_residual_cut > 0:
            raise ValidationError("z_residual_cut must be positive")

    def window_for(self, key: LayerKey) -> Window:
        return self.layer_windows.get(key, self.default_window)

    def cell_sizes(self, keys: Sequence[LayerKey]) -> dict[LayerKey, Window]:
        """Per-layer grid cell: the largest window this pass uses on the layer."""
        out = {}
        base = self.base_layers
        for k in keys:
            ws = [self.window_for(k), self.pickup_window]
            if not self.use_origin_seed and k == base[1]:
                ws.append(self.window_l2)
            if k == base[-1]:
                ws.append(self.window_l3)
            out[k] = (max(w[0] for w in ws), max(w[1] for w in ws))
        return out

    def check_against(self, detector: Detector) -> None:
        for k in self.base_layers:
            detector.layer(k)

    def replace(self, **changes) -> "PassConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "base_layers": [list(k) for k in self.base_layers],
            "use_origin_seed": self.use_origin_seed,
        }
        for f in dataclasses.fields(self):
            if f.name in d or f.name == "layer_windows":
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        d["layer_windows"] = {f"{k[0]}:{k[1]}": list(v) for k, v in sorted(self.layer_windows.items())}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PassConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown pass keys: {', '.join(sorted(unknown))}")
        if "base_layers" not in d:
            raise ValidationError("pass lacks base_layers")
        return cls(**dict(d))


@dataclass(frozen=True)
class Schedule:
    passes: tuple[PassConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "passes", tuple(self.passes))
        if not self.passes:
            raise ValidationError("a schedule needs at least one pass")

    def __len__(self):
        return len(self.passes)

    def __iter__(self):
        return iter(self.passes)

    def __getitem__(self, i):
        return self.passes[i]

    def replace_pass(self, index: int, cfg: PassConfig) -> "Schedule":
        p = list(self.passes)
        p[index] = cfg
        return Schedule(tuple(p))

    def check_against(self, detector: Detector) -> None:
        for p in self.passes:
            p.check_against(detector)


def dump_schedule(schedule: Schedule) -> str:
    return tomli_w.dumps({"passes": [p.to_dict() for p in schedule.passes]})


def write_schedule(schedule: Schedule, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_schedule(schedule), encoding="utf-8")


def parse_schedule(text: str, source="<string>") -> Schedule:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise IngestionError(source, str(exc)) from None
    passes = data.get("passes")
    if not isinstance(passes, list):
        raise IngestionError(source, "expected [[passes]] tables")
    out = []
    for i, p in enumerate(passes):
        try:
            out.append(PassConfig.from_dict(p))
        except (ValidationError, TypeError) as exc:
            raise ValidationError(f"{source}: pass {i}: {exc}") from None
    return Schedule(tuple(out))


def load_schedule(path) -> Schedule:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(path, f"cannot open: {exc.strerror or exc}") from exc
    return parse_schedule(text, path)


def shipped_schedule_path():
    return resources.files("mikado") / "data" / "default_schedule.toml"


def load_default_schedule() -> Schedule:
    """The schedule shipped with the package (built for the default detector)."""
    return parse_schedule(shipped_schedule_path().read_text(encoding="utf-8"), "default_schedule.toml")


# ------------------------------------------------------------ default layout

@dataclass(frozen=True)
class Tightness:
    min_pt: float  # GeV
    z0_max: float  # mm, vertex z the seeding windows must accept
    rphi: float  # mm, full prolongation window across the track
    dt: float  # mm, full prolongation window along t
    z_cut: float  # mm, three-hit seed z residual cut
    selection_min_hits: int


TIGHTNESS = (
    Tightness(min_pt=1.0, z0_max=60.0, rphi=1.5, dt=3.0, z_cut=0.5, selection_min_hits=7),
    Tightness(min_pt=0.5, z0_max=120.0, rphi=3.0, dt=5.0, z_cut=1.0, selection_min_hits=5),
    Tightness(min_pt=0.25, z0_max=200.0, rphi=5.0, dt=8.0, z_cut=2.0, selection_min_hits=4),
    Tightness(min_pt=0.12, z0_max=250.0, rphi=8.0, dt=12.0, z_cut=4.0, selection_min_hits=3),
)

PICKUP_WINDOW = (0.004, 1.5)
SMEAR_MARGIN = 1.0  # mm added on each side of probe-derived seed windows


def seed_layer_sets(detector: Detector) -> list[tuple[tuple[LayerKey, ...], bool]]:
    """Three seeding configurations from the four innermost cylinders:
    a triplet on the first three, the origin plus the first two, and a
    triplet on cylinders two to four."""
    cyl = [s.key for s in detector.layers if isinstance(s, Cylinder)]
    if len(cyl) < 3:
        raise ValidationError("default schedule needs at least three cylinder layers")
    sets = [(tuple(cyl[:3]), False), (tuple(cyl[:2]), True)]
    if len(cyl) >= 4:
        sets.append((tuple(cyl[1:4]), False))
    return sets


def probe_seed_windows(detector: Detector, base: Sequence[LayerKey], origin: bool, min_pt: float,
                       z0_max: float, bz: float = 2.0) -> tuple[Window, Window, float]:
    """Seed windows wide enough for every noiseless probe track.

    Probes have pT = ``min_pt`` and 100 GeV, both charges, vertex z in
    {-z0_max, 0, z0_max} and eta on a 0.05 grid. For each probe whose
    crossings exist on all base layers, the straight-line predictions are
    compared with the true crossings exactly as the finder makes them.
    Returns (window_l2, window_l3, origin z residual bound).
    """
    layers = [detector.layer(k) for k in base]
    dphi2 = dt2 = dphi3 = dt3 = zres = 0.0
    seen = False
    for pt in (min_pt, 100.0):
        k_abs = LORENTZ * bz / pt
        for q in (-1, 1):
            for z0 in (-z0_max, 0.0, z0_max):
                for i in range(-60, 61):
                    eta = 0.05 * i
                    lh = LocalHelix(0.0, 0.0, z0, 1.0, 0.0, -q * k_abs, math.sinh(eta))
                    pts = []
                    for surf in layers:
                        c = lh.crossing(surf, True, 0.0)
                        if c is None:
                            break
                        pts.append(c)
                    if len(pts) < len(layers):
                        continue
                    seen = True
                    if origin:
                        a, b = pts
                        p = project_line(0.0, 0.0, 0.0, a.x, a.y, a.z, layers[1])
                        if p is None:
                            continue
                        dphi3 = max(dphi3, abs(math.remainder(p[0] - b.phi, 2 * math.pi)))
                        dt3 = max(dt3, abs(p[1] - b.t))
                        zres = max(zres, abs(z0))
                    else:
                        a, b, c3 = pts
                        p = project_line(0.0, 0.0, 0.0, a.x, a.y, a.z, layers[1])
                        if p is not None:
                            dphi2 = max(dphi2, abs(math.remainder(p[0] - b.phi, 2 * math.pi)))
                            dt2 = max(dt2, abs(p[1] - b.t))
                        p = project_line(a.x, a.y, a.z, b.x, b.y, b.z, layers[2])
                        if p is not None:
                            dphi3 = max(dphi3, abs(math.remainder(p[0] - c3.phi, 2 * math.pi)))
                            dt3 = max(dt3, abs(p[1] - c3.t))
    if not seen:
        raise ValidationError(f"no probe track crosses all base layers {list(base)}")

    def widen(dphi, dt, surf):
        r = surf.reference_radius
        return (min(MAX_WINDOW_PHI, 2.0 * (1.25 * dphi + SMEAR_MARGIN / r)),
                2.0 * (1.25 * dt + SMEAR_MARGIN))

    w3 = widen(dphi3, dt3, layers[-1])
    w2 = widen(dphi2, dt2, layers[1]) if not origin else w3
    return w2, w3, zres


def default_schedule(detector: Detector | None = None, bz: float = 2.0) -> Schedule:
    """Twelve passes: four tightness levels, each over three seed configurations."""
    detector = detector or default_detector()
    passes = []
    for level, tight in enumerate(TIGHTNESS):
        layer_windows = {
            s.key: (min(MAX_WINDOW_PHI, tight.rphi / s.reference_radius), tight.dt) for s in detector.layers
        }
        for base, origin in seed_layer_sets(detector):
            w2, w3, zres = probe_seed_windows(detector, base, origin, tight.min_pt, tight.z0_max, bz)
            passes.append(PassConfig(
                name=f"L{level}-{'O' if origin else 'T'}{'-'.join(f'{v}.{l}' for v, l in base)}",
                base_layers=base,
                use_origin_seed=origin,
                window_l2=w2,
                window_l3=w3,
                layer_windows=layer_windows,
                default_window=(min(MAX_WINDOW_PHI, tight.rphi / 100.0), tight.dt),
                pickup_window=PICKUP_WINDOW,
                z_residual_cut=(zres + 10.0) if origin else tight.z_cut,
                min_pt=tight.min_pt,
                selection_min_hits=tight.selection_min_hits,
            ))
    return Schedule(tuple(passes))
