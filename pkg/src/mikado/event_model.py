"""Hits, particles, truth links, events and solutions, plus their CSV files.

Per-event files live side by side in one directory::

    event000000001-hits.csv       hit_id,x,y,z,volume_id,layer_id,module_id
    event000000001-truth.csv      hit_id,particle_id,weight
    event000000001-particles.csv  particle_id,vx,vy,vz,px,py,pz,q,is_secondary

and a solution file carries ``event_id,hit_id,track_id`` rows. Floats are
written with ``repr`` so a write/read cycle is exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import DomainError, IngestionError, ValidationError

HITS_COLUMNS = ("hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id")
TRUTH_COLUMNS = ("hit_id", "particle_id", "weight")
PARTICLE_COLUMNS = ("particle_id", "vx", "vy", "vz", "px", "py", "pz", "q", "is_secondary")
SOLUTION_COLUMNS = ("event_id", "hit_id", "track_id")

TWO_PI = 2.0 * math.pi


def wrap_angle(phi: float) -> float:
    """Map an angle to (-pi, pi]."""
    if -math.pi < phi <= math.pi:
        return phi
    phi = math.fmod(phi, TWO_PI)
    if phi <= -math.pi:
        phi += TWO_PI
    elif phi > math.pi:
        phi -= TWO_PI
    return phi


@dataclass(frozen=True, slots=True)
class Hit:
    hit_id: int
    x: float
    y: float
    z: float
    volume_id: int
    layer_id: int
    module_id: int = 0

    @property
    def layer_key(self) -> tuple[int, int]:
        return (self.volume_id, self.layer_id)


@dataclass(frozen=True, slots=True)
class Particle:
    particle_id: int
    vx: float
    vy: float
    vz: float
    px: float
    py: float
    pz: float
    q: int
    is_secondary: bool = False

    def __post_init__(self):
        if self.q not in (-1, 1):
            raise ValidationError(f"particle {self.particle_id}: charge must be +1 or -1, got {self.q}")

    @property
    def pt(self) -> float:
        return math.hypot(self.px, self.py)


@dataclass(frozen=True, slots=True)
class TruthLink:
    hit_id: int
    particle_id: int
    weight: float


class Kinematics(NamedTuple):
    pt: float
    phi: float
    eta: float
    r0: float
    z0: float


def kinematics(particle: Particle) -> Kinematics:
    """Truth-level variables used for binning efficiencies.

    ``eta`` is ``asinh(pz / pT)``, i.e. ``-ln tan(theta / 2)``.
    """
    pt = math.hypot(particle.px, particle.py)
    if pt == 0.0:
        if particle.pz == 0.0:
            raise DomainError(f"particle {particle.particle_id} has zero momentum")
        raise DomainError(f"particle {particle.particle_id} has zero transverse momentum")
    return Kinematics(
        pt=pt,
        phi=wrap_angle(math.atan2(particle.py, particle.px)),
        eta=math.asinh(particle.pz / pt),
        r0=math.hypot(particle.vx, particle.vy),
        z0=particle.vz,
    )


@dataclass(frozen=True)
class Event:
    event_id: int
    hits: tuple[Hit, ...]
    particles: tuple[Particle, ...] = ()
    truth: tuple[TruthLink, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hits", tuple(self.hits))
        object.__setattr__(self, "particles", tuple(self.particles))
        object.__setattr__(self, "truth", tuple(self.truth))

    @property
    def has_truth(self) -> bool:
        return bool(self.truth)

    @cached_property
    def hit_index(self) -> dict[int, Hit]:
        return {h.hit_id: h for h in self.hits}

    @cached_property
    def truth_by_hit(self) -> dict[int, TruthLink]:
        return {t.hit_id: t for t in self.truth}

    @cached_property
    def particle_index(self) -> dict[int, Particle]:
        return {p.particle_id: p for p in self.particles}

    @cached_property
    def hits_by_particle(self) -> dict[int, list[int]]:
        """Non-noise particle id -> hit ids, in hit order."""
        out: dict[int, list[int]] = {}
        for t in self.truth:
            if t.particle_id != 0:
                out.setdefault(t.particle_id, []).append(t.hit_id)
        return out

    def validate(self) -> None:
        """Raise :class:`ValidationError` if any cross-reference is broken."""
        seen: set[int] = set()
        for h in self.hits:
            if h.hit_id in seen:
                raise ValidationError(f"event {self.event_id}: duplicate hit_id {h.hit_id}")
            seen.add(h.hit_id)
        pids = set()
        for p in self.particles:
            if p.particle_id in pids or p.particle_id <= 0:
                raise ValidationError(f"event {self.event_id}: bad or duplicate particle_id {p.particle_id}")
            pids.add(p.particle_id)
        if not self.truth:
            return
        linked: set[int] = set()
        for t in self.truth:
            if t.hit_id not in seen:
                raise ValidationError(f"event {self.event_id}: truth references unknown hit {t.hit_id}")
            if t.hit_id in linked:
                raise ValidationError(f"event {self.event_id}: hit {t.hit_id} has more than one truth link")
            linked.add(t.hit_id)
            if t.particle_id != 0 and t.particle_id not in pids:
                raise ValidationError(f"event {self.event_id}: truth references unknown particle {t.particle_id}")
            if not (t.weight >= 0.0) or not math.isfinite(t.weight):
                raise ValidationError(f"event {self.event_id}: hit {t.hit_id} has invalid weight {t.weight}")
            if t.particle_id == 0 and t.weight != 0.0:
                raise ValidationError(f"event {self.event_id}: noise hit {t.hit_id} has non-zero weight")
        if len(linked) != len(seen):
            missing = min(seen - linked)
            raise ValidationError(f"event {self.event_id}: hit {missing} has no truth link")


@dataclass(frozen=True)
class Solution:
    """Total assignment hit_id -> track_id; track 0 means unassigned."""

    event_id: int
    assignment: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))

    def tracks(self) -> dict[int, list[int]]:
        """track_id -> sorted hit ids, unassigned hits omitted."""
        out: dict[int, list[int]] = {}
        for hid, tid in sorted(self.assignment.items()):
            if tid != 0:
                out.setdefault(tid, []).append(hid)
        return out

    def check_total(self, event: Event) -> None:
        hit_ids = {h.hit_id for h in event.hits}
        if set(self.assignment) != hit_ids:
            raise ValidationError(f"solution for event {self.event_id} does not cover exactly the event's hits")
        bad = [t for t in self.assignment.values() if t < 0]
        if bad:
            raise ValidationError(f"solution for event {self.event_id} has negative track ids")


# --------------------------------------------------------------------- file IO

def event_prefix(event_id: int) -> str:
    return f"event{event_id:09d}"


def event_paths(directory, event_id: int) -> dict[str, Path]:
    base = Path(directory) / event_prefix(event_id)
    return {
        "hits": Path(f"{base}-hits.csv"),
        "truth": Path(f"{base}-truth.csv"),
        "particles": Path(f"{base}-particles.csv"),
    }


def list_event_ids(directory) -> list[int]:
    """Event ids with a hits file in ``directory``, ascending."""
    ids = []
    for p in Path(directory).glob("event*-hits.csv"):
        stem = p.name[len("event"):-len("-hits.csv")]
        if stem.isdigit():
            ids.append(int(stem))
    return sorted(ids)


def _read_rows(path: Path, required: Sequence[str], optional: Sequence[str] = ()):
    """Yield (line_number, row dict) with all required columns present."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(path, f"cannot open: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(path, "empty file, header expected", line=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestionError(path, f"missing column(s) {', '.join(missing)}", line=1)
        cols = {c: header.index(c) for c in (*required, *optional) if c in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(path, f"expected {len(header)} fields, got {len(row)}", line=lineno)
            yield lineno, {c: row[i] for c, i in cols.items()}


def _parse(path, lineno, conv, value, column):
    try:
        return conv(value)
    except ValueError:
        raise IngestionError(path, f"column {column}: cannot parse {value!r}", line=lineno) from None


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(text)
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true"):
        return True
    if t in ("0", "false"):
        return False
    raise ValueError(text)


def read_hits(path) -> list[Hit]:
    path = Path(path)
    hits = []
    for ln, row in _read_rows(path, HITS_COLUMNS[:-1], ("module_id",)):
        hits.append(Hit(
            hit_id=_parse(path, ln, _int, row["hit_id"], "hit_id"),
            x=_parse(path, ln, _float, row["x"], "x"),
            y=_parse(path, ln, _float, row["y"], "y"),
            z=_parse(path, ln, _float, row["z"], "z"),
            volume_id=_parse(path, ln, _int, row["volume_id"], "volume_id"),
            layer_id=_parse(path, ln, _int, row["layer_id"], "layer_id"),
            module_id=_parse(path, ln, _int, row.get("module_id", "0"), "module_id"),
        ))
    return hits


def read_truth(path) -> list[TruthLink]:
    path = Path(path)
    out = []
    for ln, row in _read_rows(path, TRUTH_COLUMNS):
        out.append(TruthLink(
            hit_id=_parse(path, ln, _int, row["hit_id"], "hit_id"),
            particle_id=_parse(path, ln, _int, row["particle_id"], "particle_id"),
            weight=_parse(path, ln, _float, row["weight"], "weight"),
        ))
    return out


def read_particles(path, secondary_r0: float = 1.0, secondary_z0: float | None = None) -> list[Particle]:
    """Read a particles file.

    Files without an ``is_secondary`` column get the flag inferred from the
    vertex: transverse distance above ``secondary_r0`` mm, or ``|vz|`` above
    ``secondary_z0`` mm when that is given.
    """
    path = Path(path)
    out = []
    for ln, row in _read_rows(path, PARTICLE_COLUMNS[:-1], ("is_secondary",)):
        vals = {c: _parse(path, ln, _float, row[c], c) for c in ("vx", "vy", "vz", "px", "py", "pz")}
        q = _parse(path, ln, _int, row["q"], "q")
        if "is_secondary" in row:
            sec = _parse(path, ln, _bool, row["is_secondary"], "is_secondary")
        else:
            sec = math.hypot(vals["vx"], vals["vy"]) > secondary_r0
            if secondary_z0 is not None:
                sec = sec or abs(vals["vz"]) > secondary_z0
        try:
            out.append(Particle(_parse(path, ln, _int, row["particle_id"], "particle_id"), q=q,
                                is_secondary=sec, **vals))
        except ValidationError as exc:
            raise IngestionError(path, str(exc), line=ln) from None
    return out


def load_event(directory, event_id: int, with_truth: bool = True, **particle_opts) -> Event:
    """Read one event's CSV files and validate cross references.

    Truth and particles are left empty when ``with_truth`` is false or their
    files are absent.
    """
    paths = event_paths(directory, event_id)
    hits = read_hits(paths["hits"])
    truth: list[TruthLink] = []
    particles: list[Particle] = []
    if with_truth:
        if paths["truth"].exists():
            truth = read_truth(paths["truth"])
        if paths["particles"].exists():
            particles = read_particles(paths["particles"], **particle_opts)
    event = Event(event_id, tuple(hits), tuple(particles), tuple(truth))
    event.validate()
    return event


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_event(event: Event, directory) -> dict[str, Path]:
    paths = event_paths(directory, event.event_id)
    _write_csv(paths["hits"], HITS_COLUMNS,
               ((h.hit_id, _fmt(h.x), _fmt(h.y), _fmt(h.z), h.volume_id, h.layer_id, h.module_id)
                for h in event.hits))
    if event.truth:
        _write_csv(paths["truth"], TRUTH_COLUMNS,
                   ((t.hit_id, t.particle_id, _fmt(t.weight)) for t in event.truth))
    if event.particles or event.truth:
        _write_csv(paths["particles"], PARTICLE_COLUMNS,
                   ((p.particle_id, _fmt(p.vx), _fmt(p.vy), _fmt(p.vz), _fmt(p.px), _fmt(p.py),
                     _fmt(p.pz), p.q, int(p.is_secondary)) for p in event.particles))
    return paths


def solution_path(directory, event_id: int) -> Path:
    return Path(directory) / f"{event_prefix(event_id)}-solution.csv"


def write_solution(solution: Solution, path) -> None:
    """Write rows sorted by hit_id."""
    _write_csv(Path(path), SOLUTION_COLUMNS,
               ((solution.event_id, hid, tid) for hid, tid in sorted(solution.assignment.items())))


def read_solution(path, event_id: int | None = None) -> Solution:
    """Parse a solution file.

    A header-only file yields an empty assignment for ``event_id`` (0 when not
    given). Rows for more than one event are rejected.
    """
    path = Path(path)
    assignment: dict[int, int] = {}
    seen_event = None
    for ln, row in _read_rows(path, SOLUTION_COLUMNS):
        ev = _parse(path, ln, _int, row["event_id"], "event_id")
        if seen_event is None:
            seen_event = ev
        elif ev != seen_event:
            raise IngestionError(path, f"rows for several events ({seen_event}, {ev})", line=ln)
        hid = _parse(path, ln, _int, row["hit_id"], "hit_id")
        if hid in assignment:
            raise IngestionError(path, f"hit {hid} listed twice", line=ln)
        assignment[hid] = _parse(path, ln, _int, row["track_id"], "track_id")
    if seen_event is None:
        seen_event = 0 if event_id is None else event_id
    return Solution(seen_event, assignment)
