"""Detector layers as (phi, t) surfaces and the per-layer field model.

Every layer is either a cylinder around the beam axis (``t`` is ``z``) or a
disk perpendicular to it (``t`` is the transverse radius). Hits are projected
towards the origin onto their surface before (phi, t) is taken, which is a
no-op for points that already lie on the surface.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Iterable, Mapping, Sequence, Union

import tomli

from .errors import GeometryError, IngestionError, ValidationError

LayerKey = tuple[int, int]

FIELD_VARIANTS = ("seed", "inward", "outward")
DEFAULT_TOLERANCE = 2.0  # mm


class Subdetector(str, enum.Enum):
    PIXEL = "Pixel"
    SHORT_STRIP = "ShortStrip"
    LONG_STRIP = "LongStrip"


@dataclass(frozen=True, slots=True)
class Cylinder:
    key: LayerKey
    radius: float
    z_min: float
    z_max: float
    subdetector: Subdetector = Subdetector.PIXEL
    kind: ClassVar[str] = "C"

    def __post_init__(self):
        if not (self.radius > 0 and self.z_min < self.z_max):
            raise ValidationError(f"layer {self.key}: need radius>0 and z_min<z_max")

    @property
    def t_range(self) -> tuple[float, float]:
        return (self.z_min, self.z_max)

    @property
    def reference_radius(self) -> float:
        """Radius used to turn a transverse distance into an azimuth window."""
        return self.radius

    def sort_key(self):
        return (self.radius, 0.0, 0.0)

    def project(self, x: float, y: float, z: float) -> tuple[float, float]:
        r = math.hypot(x, y)
        if r == 0.0:
            raise GeometryError(f"point on the beam axis cannot be projected onto cylinder {self.key}")
        return _phi(x, y), z * self.radius / r

    def distance(self, x: float, y: float, z: float) -> float:
        dr = abs(math.hypot(x, y) - self.radius)
        dz = max(self.z_min - z, z - self.z_max, 0.0)
        return math.hypot(dr, dz)

    def point_at(self, phi: float, t: float) -> tuple[float, float, float]:
        return self.radius * math.cos(phi), self.radius * math.sin(phi), t

    def dims(self) -> tuple[float, float, float]:
        return (self.radius, self.z_min, self.z_max)


@dataclass(frozen=True, slots=True)
class Disk:
    key: LayerKey
    z: float
    r_min: float
    r_max: float
    subdetector: Subdetector = Subdetector.PIXEL
    kind: ClassVar[str] = "D"

    def __post_init__(self):
        if not (0 <= self.r_min < self.r_max) or self.z == 0.0:
            raise ValidationError(f"layer {self.key}: need 0<=r_min<r_max and z!=0")

    @property
    def t_range(self) -> tuple[float, float]:
        return (self.r_min, self.r_max)

    @property
    def reference_radius(self) -> float:
        return self.r_min if self.r_min > 0 else 0.5 * self.r_max

    def sort_key(self):
        return (self.r_min, abs(self.z), self.z)

    def project(self, x: float, y: float, z: float) -> tuple[float, float]:
        if z == 0.0 or (z > 0) != (self.z > 0):
            raise GeometryError(f"point at z={z} cannot be projected onto disk {self.key}")
        return _phi(x, y), math.hypot(x, y) * self.z / z

    def distance(self, x: float, y: float, z: float) -> float:
        r = math.hypot(x, y)
        dr = max(self.r_min - r, r - self.r_max, 0.0)
        return math.hypot(z - self.z, dr)

    def point_at(self, phi: float, t: float) -> tuple[float, float, float]:
        return t * math.cos(phi), t * math.sin(phi), self.z

    def dims(self) -> tuple[float, float, float]:
        return (self.z, self.r_min, self.r_max)


LayerSurface = Union[Cylinder, Disk]


def _phi(x: float, y: float) -> float:
    phi = math.atan2(y, x)
    # atan2(-0.0, x<0) returns -pi; the package convention is (-pi, pi]
    return math.pi if phi == -math.pi else phi


def surface_coords(hit, surface: LayerSurface, tolerance: float = DEFAULT_TOLERANCE) -> tuple[float, float]:
    """(phi, t) of a hit on its layer surface.

    Raises :class:`GeometryError` when the hit is farther than ``tolerance``
    mm from the surface.
    """
    d = surface.distance(hit.x, hit.y, hit.z)
    if d > tolerance:
        raise GeometryError(f"hit {getattr(hit, 'hit_id', '?')} is {d:.3f} mm off layer {surface.key}")
    return surface.project(hit.x, hit.y, hit.z)


@dataclass(frozen=True)
class LayerField:
    """Polynomial Bz(t) in tesla, one coefficient set per use."""

    key: LayerKey
    coefficients: Mapping[str, tuple[float, ...]]

    def __post_init__(self):
        coeffs = {v: tuple(float(c) for c in self.coefficients.get(v, ())) for v in FIELD_VARIANTS}
        if not coeffs["seed"]:
            raise ValidationError(f"field for layer {self.key}: seed coefficients required")
        for v in ("inward", "outward"):
            if not coeffs[v]:
                coeffs[v] = coeffs["seed"]
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def uniform(cls, key: LayerKey, bz: float) -> "LayerField":
        return cls(key, {"seed": (bz,)})

    def evaluate(self, t: float, variant: str = "seed") -> float:
        try:
            coeffs = self.coefficients[variant]
        except KeyError:
            raise ValidationError(f"unknown field variant {variant!r}") from None
        acc = 0.0
        for c in reversed(coeffs):
            acc = acc * t + c
        return acc


@dataclass(frozen=True)
class Detector:
    layers: tuple[LayerSurface, ...]
    fields: Mapping[LayerKey, LayerField] = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(sorted(self.layers, key=lambda s: s.sort_key()))
        keys = [s.key for s in layers]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate layer keys in detector")
        object.__setattr__(self, "layers", layers)
        fields = dict(self.fields)
        for k in fields:
            if k not in keys:
                raise ValidationError(f"field given for unknown layer {k}")
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "_by_key", {s.key: s for s in layers})

    @property
    def keys(self) -> list[LayerKey]:
        return [s.key for s in self.layers]

    @property
    def outward(self) -> tuple[LayerSurface, ...]:
        """Candidate order for outward prolongation; the finder picks the first crossing."""
        return self.layers

    @property
    def inward(self) -> tuple[LayerSurface, ...]:
        return tuple(reversed(self.layers))

    def layer(self, key) -> LayerSurface:
        try:
            return self._by_key[tuple(key)]
        except KeyError:
            raise ValidationError(f"unknown layer {tuple(key)}") from None

    def __contains__(self, key) -> bool:
        return tuple(key) in self._by_key

    def field_at(self, key, t: float, variant: str = "seed", default: float = 2.0) -> float:
        self.layer(key)
        f = self.fields.get(tuple(key))
        if f is None:
            return default
        return f.evaluate(t, variant)

    def with_fields(self, fields: Mapping[LayerKey, LayerField]) -> "Detector":
        merged = dict(self.fields)
        merged.update(fields)
        return Detector(self.layers, merged)


def field_at(detector: Detector, layer_key, t: float, variant: str = "seed") -> float:
    return detector.field_at(layer_key, t, variant)


PIXEL_VOLUME = 8
SHORT_STRIP_VOLUME = 13
LONG_STRIP_VOLUME = 17
NEG_ENDCAP_VOLUME = 7
POS_ENDCAP_VOLUME = 9


def default_detector(
    pixel_radii: Sequence[float] = (32.0, 72.0, 116.0),
    short_strip_radii: Sequence[float] = (260.0, 360.0, 500.0),
    long_strip_radii: Sequence[float] = (660.0, 820.0, 1020.0),
    pixel_half_length: float = 500.0,
    strip_half_length: float = 1100.0,
    disk_z: float = 600.0,
    disk_r_min: float = 120.0,
    disk_r_max: float = 500.0,
    bz: float = 2.0,
) -> Detector:
    """Ten-layer stand-in detector: three cylinders per subdetector plus one disk per side."""
    layers: list[LayerSurface] = []
    for vol, radii, half, sub in (
        (PIXEL_VOLUME, pixel_radii, pixel_half_length, Subdetector.PIXEL),
        (SHORT_STRIP_VOLUME, short_strip_radii, strip_half_length, Subdetector.SHORT_STRIP),
        (LONG_STRIP_VOLUME, long_strip_radii, strip_half_length, Subdetector.LONG_STRIP),
    ):
        for i, r in enumerate(radii):
            layers.append(Cylinder((vol, 2 * (i + 1)), float(r), -float(half), float(half), sub))
    if disk_z:
        layers.append(Disk((NEG_ENDCAP_VOLUME, 2), -abs(disk_z), disk_r_min, disk_r_max, Subdetector.PIXEL))
        layers.append(Disk((POS_ENDCAP_VOLUME, 2), abs(disk_z), disk_r_min, disk_r_max, Subdetector.PIXEL))
    fields = {s.key: LayerField.uniform(s.key, bz) for s in layers}
    return Detector(tuple(layers), fields)


def detector_from_config(path) -> Detector:
    """Build the default layout with overrides from a TOML file.

    Keys are the keyword arguments of :func:`default_detector`, at top level
    or under a ``[detector]`` table.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    except OSError as exc:
        raise IngestionError(path, f"cannot open: {exc.strerror or exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise IngestionError(path, str(exc)) from exc
    cfg = cfg.get("detector", cfg)
    try:
        return default_detector(**cfg)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


GEOMETRY_COLUMNS = ("volume_id", "layer_id", "kind", "dim1", "dim2", "dim3", "subdetector")


def write_geometry(detector: Detector, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GEOMETRY_COLUMNS)
        for s in detector.layers:
            w.writerow((*s.key, s.kind, *(repr(float(d)) for d in s.dims()), s.subdetector.value))


def load_geometry(path, field_path=None, bz: float = 2.0) -> Detector:
    """Read a geometry CSV (and optionally a field CSV).

    Layers without a field row get a uniform ``bz``.
    """
    path = Path(path)
    layers: list[LayerSurface] = []
    for ln, row in _csv_rows(path, GEOMETRY_COLUMNS):
        try:
            key = (int(row["volume_id"]), int(row["layer_id"]))
            dims = [float(row[c]) for c in ("dim1", "dim2", "dim3")]
            sub = Subdetector(row["subdetector"].strip())
            kind = row["kind"].strip().upper()
            if kind == "C":
                layers.append(Cylinder(key, *dims, subdetector=sub))
            elif kind == "D":
                layers.append(Disk(key, *dims, subdetector=sub))
            else:
                raise ValueError(f"kind must be C or D, got {kind!r}")
        except (ValueError, ValidationError) as exc:
            raise IngestionError(path, str(exc), line=ln) from None
    fields = {s.key: LayerField.uniform(s.key, bz) for s in layers}
    det = Detector(tuple(layers), fields)
    if field_path is not None:
        det = det.with_fields(load_fields(field_path))
    return det


def load_fields(path) -> dict[LayerKey, LayerField]:
    """Read ``volume_id,layer_id,variant,c0,c1,...`` rows."""
    path = Path(path)
    raw: dict[LayerKey, dict[str, tuple[float, ...]]] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(path, f"cannot open: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["volume_id", "layer_id", "variant"]:
            raise IngestionError(path, "header must start with volume_id,layer_id,variant", line=1)
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                key = (int(row[0]), int(row[1]))
                variant = row[2].strip()
                if variant not in FIELD_VARIANTS:
                    raise ValueError(f"unknown variant {variant!r}")
                coeffs = tuple(float(c) for c in row[3:] if c.strip() != "")
                if not coeffs:
                    raise ValueError("no coefficients")
            except (ValueError, IndexError) as exc:
                raise IngestionError(path, str(exc), line=ln) from None
            raw.setdefault(key, {})[variant] = coeffs
    out = {}
    for key, variants in raw.items():
        if "seed" not in variants:
            raise IngestionError(path, f"layer {key} lacks a seed row")
        out[key] = LayerField(key, variants)
    return out


def write_fields(fields: Iterable[LayerField], path) -> None:
    fields = list(fields)
    width = max((len(c) for f in fields for c in f.coefficients.values()), default=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "layer_id", "variant", *(f"c{i}" for i in range(width))])
        for f in fields:
            for v in FIELD_VARIANTS:
                c = f.coefficients[v]
                w.writerow([*f.key, v, *(repr(x) for x in c), *([""] * (width - len(c)))])


def _csv_rows(path: Path, required):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(path, f"cannot open: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestionError(path, f"missing column(s) {', '.join(missing)}", line=1)
        for ln, row in enumerate(reader, start=2):
            yield ln, row
