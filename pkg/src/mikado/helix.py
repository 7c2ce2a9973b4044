"""Local helix machinery: three-hit fit, straight-line projections and
extrapolation to layer surfaces.

A helix is handled through its transverse arc length ``s``: the xy
projection is a circle of signed curvature ``k`` (positive means
counter-clockwise, 1/mm) and ``z`` is linear in ``s``. Below
``STRAIGHT_CURVATURE`` the formulas switch to a straight line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import DomainError
from .geometry import Cylinder, Disk, LayerSurface

STRAIGHT_CURVATURE = 1e-7  # 1/mm
# GeV / (T * mm): pT = LORENTZ * |Bz| * R
LORENTZ = 0.3e-3
MIN_STEP = 1e-6  # mm, crossings closer than this to the start are ignored
TWO_PI = 2.0 * math.pi

INTERIOR = "interior"
NEAR_EDGE = "near_edge"


class Crossing(NamedTuple):
    phi: float
    t: float
    kind: str
    x: float
    y: float
    z: float
    s: float


@dataclass(frozen=True, slots=True)
class TrajectoryState:
    x: float
    y: float
    z: float
    px: float
    py: float
    pz: float
    q: int  # 0 only for the straight-line (infinite pT) sentinel

    @property
    def pt(self) -> float:
        return math.hypot(self.px, self.py)


def _xyz(p) -> tuple[float, float, float]:
    if hasattr(p, "x"):
        return float(p.x), float(p.y), float(p.z)
    x, y, z = p
    return float(x), float(y), float(z)


def _phi(x: float, y: float) -> float:
    phi = math.atan2(y, x)
    return math.pi if phi == -math.pi else phi


def _ccw_angle(ax, ay, bx, by) -> float:
    """Counter-clockwise rotation from vector a to vector b, in [0, 2pi)."""
    ang = math.atan2(ax * by - ay * bx, ax * bx + ay * by)
    return ang + TWO_PI if ang < 0.0 else ang


class LocalHelix:
    """A helix given by a point, the unit transverse direction there, the
    signed curvature and dz/ds."""

    __slots__ = ("x", "y", "z", "ux", "uy", "k", "dzds")

    def __init__(self, x, y, z, ux, uy, k, dzds):
        self.x = x
        self.y = y
        self.z = z
        self.ux = ux
        self.uy = uy
        self.k = 0.0 if abs(k) < STRAIGHT_CURVATURE else k
        self.dzds = dzds

    @classmethod
    def from_state(cls, state: TrajectoryState, bz: float) -> "LocalHelix":
        pt = state.pt
        if pt == 0.0:
            raise DomainError("state has zero transverse momentum")
        k = 0.0 if math.isinf(pt) or state.q == 0 else -state.q * LORENTZ * bz / pt
        return cls(state.x, state.y, state.z, state.px / pt, state.py / pt, k, state.pz / pt)

    @property
    def is_line(self) -> bool:
        return self.k == 0.0

    def position(self, s: float) -> tuple[float, float, float]:
        k = self.k
        if k == 0.0:
            return self.x + self.ux * s, self.y + self.uy * s, self.z + self.dzds * s
        th = k * s
        sn = math.sin(th)
        omc = 2.0 * math.sin(0.5 * th) ** 2  # 1 - cos(th), without cancellation
        return (self.x + (self.ux * sn - self.uy * omc) / k,
                self.y + (self.ux * omc + self.uy * sn) / k,
                self.z + self.dzds * s)

    def direction(self, s: float) -> tuple[float, float]:
        if self.k == 0.0:
            return self.ux, self.uy
        c, sn = math.cos(self.k * s), math.sin(self.k * s)
        return self.ux * c - self.uy * sn, self.ux * sn + self.uy * c

    def at(self, s: float) -> "LocalHelix":
        x, y, z = self.position(s)
        ux, uy = self.direction(s)
        return LocalHelix(x, y, z, ux, uy, self.k, self.dzds)

    def with_curvature(self, k: float) -> "LocalHelix":
        return LocalHelix(self.x, self.y, self.z, self.ux, self.uy, k, self.dzds)

    # -- range of monotonic radial motion ---------------------------------

    def _circle(self):
        inv = 1.0 / self.k
        cx = self.x - self.uy * inv
        cy = self.y + self.ux * inv
        return cx, cy, abs(inv)

    def _arc_to(self, px, py, forward: bool) -> float:
        """Arc length from the start to point (px, py) on the circle, in the
        requested direction (returned non-negative)."""
        cx, cy, R = self._circle()
        ang = _ccw_angle(self.x - cx, self.y - cy, px - cx, py - cy)
        if (self.k > 0.0) != forward:
            ang = (TWO_PI - ang) % TWO_PI
        return ang * R

    def _limits(self, forward: bool) -> float:
        """Largest |s| for which the motion in the requested direction stays
        on the outward (forward) or inward (backward) leg of the orbit."""
        if self.k == 0.0:
            b = self.x * self.ux + self.y * self.uy
            if forward:
                return math.inf
            return b if b > 0.0 else 0.0
        cx, cy, R = self._circle()
        d = math.hypot(cx, cy)
        if d == 0.0:
            return TWO_PI * R
        sgn = 1.0 if forward else -1.0
        return self._arc_to(cx + sgn * R * cx / d, cy + sgn * R * cy / d, forward)

    # -- surface crossings -------------------------------------------------

    def cross_cylinder(self, radius: float, forward: bool = True) -> float | None:
        """Arc length of the first crossing with a cylinder, or None."""
        limit = self._limits(forward)
        best = None
        if self.k == 0.0:
            b = self.x * self.ux + self.y * self.uy
            c = self.x * self.x + self.y * self.y - radius * radius
            disc = b * b - c
            if disc < 0.0:
                return None
            sq = math.sqrt(disc)
            for s in (-b - sq, -b + sq):
                if forward and MIN_STEP < s <= limit:
                    if best is None or s < best:
                        best = s
                elif not forward and -limit <= s < -MIN_STEP:
                    if best is None or s > best:
                        best = s
            return best
        cx, cy, R = self._circle()
        d = math.hypot(cx, cy)
        if d == 0.0 or d > R + radius or d < abs(R - radius):
            return None
        a = (radius * radius - R * R + d * d) / (2.0 * d)
        h2 = radius * radius - a * a
        h = math.sqrt(h2) if h2 > 0.0 else 0.0
        ex, ey = cx / d, cy / d
        for sgn in (1.0, -1.0):
            qx = a * ex - sgn * h * ey
            qy = a * ey + sgn * h * ex
            arc = self._arc_to(qx, qy, forward)
            if MIN_STEP < arc <= limit and (best is None or arc < best):
                best = arc
        if best is None:
            return None
        return best if forward else -best

    def cross_plane(self, zplane: float, forward: bool = True) -> float | None:
        if self.dzds == 0.0:
            return None
        s = (zplane - self.z) / self.dzds
        limit = self._limits(forward)
        if forward and MIN_STEP < s <= limit:
            return s
        if not forward and -limit <= s < -MIN_STEP:
            return s
        return None

    def crossing(self, surface: LayerSurface, forward: bool = True, edge_margin: float = 10.0) -> Crossing | None:
        """First crossing with ``surface`` in the given direction.

        Crossings up to ``edge_margin`` mm outside the surface bounds are
        returned as ``near_edge``, as are those within the margin inside.
        """
        if isinstance(surface, Cylinder):
            s = self.cross_cylinder(surface.radius, forward)
            if s is None:
                return None
            x, y, z = self.position(s)
            t = z
        else:
            s = self.cross_plane(surface.z, forward)
            if s is None:
                return None
            x, y, z = self.position(s)
            t = math.hypot(x, y)
        lo, hi = surface.t_range
        if t < lo - edge_margin or t > hi + edge_margin:
            return None
        kind = INTERIOR if lo + edge_margin <= t <= hi - edge_margin else NEAR_EDGE
        return Crossing(_phi(x, y), t, kind, x, y, z, s)


@dataclass(frozen=True, slots=True)
class ThreeHitHelix:
    """Helix through three hits: the circle passes through all three xy
    projections; z is linear in arc length and exact at hits 2 and 3.

    Arc lengths ``s1`` (< 0) and ``s3`` (> 0) locate hits 1 and 3 relative
    to hit 2, oriented from hit 1 towards hit 3.
    """

    x2: float
    y2: float
    z2: float
    ux: float
    uy: float
    k: float
    dzds: float
    s1: float
    s3: float
    bz: float

    @property
    def is_line(self) -> bool:
        return self.k == 0.0

    @property
    def radius(self) -> float:
        return math.inf if self.k == 0.0 else 1.0 / abs(self.k)

    @property
    def turning(self) -> int:
        """+1 counter-clockwise, -1 clockwise, 0 straight."""
        return 0 if self.k == 0.0 else (1 if self.k > 0 else -1)

    @property
    def center(self) -> tuple[float, float]:
        if self.k == 0.0:
            return (math.inf, math.inf)
        inv = 1.0 / self.k
        return self.x2 - self.uy * inv, self.y2 + self.ux * inv

    @property
    def dz_dphi(self) -> float:
        """z advance per radian of turning (mm/rad); inf for a line."""
        return math.inf if self.k == 0.0 else self.dzds / abs(self.k)

    @property
    def ref_azimuth(self) -> float:
        """Azimuth of hit 2 seen from the circle center."""
        cx, cy = self.center
        return math.atan2(self.y2 - cy, self.x2 - cx)

    def local(self, s: float = 0.0, bz: float | None = None) -> LocalHelix:
        """Local helix at arc length ``s``; with ``bz`` the curvature is
        rescaled so the momentum is kept but the field changes."""
        lh = LocalHelix(self.x2, self.y2, self.z2, self.ux, self.uy, self.k, self.dzds)
        if s != 0.0:
            lh = lh.at(s)
        if bz is not None and bz != self.bz and self.k != 0.0:
            lh = lh.with_curvature(self.k * bz / self.bz)
        return lh

    def position(self, s: float) -> tuple[float, float, float]:
        return self.local().position(s)

    def arc_of(self, x: float, y: float) -> float:
        """Arc length of the point on the helix nearest in azimuth to (x, y),
        taken within half a turn of hit 2."""
        if self.k == 0.0:
            return (x - self.x2) * self.ux + (y - self.y2) * self.uy
        cx, cy = self.center
        ang = _ccw_angle(self.x2 - cx, self.y2 - cy, x - cx, y - cy)
        if ang > math.pi:
            ang -= TWO_PI
        return ang / self.k


def fit_three_hits(h1, h2, h3, bz: float = 2.0) -> ThreeHitHelix:
    """Fit the helix through three hits ordered along the track.

    Hits are objects with ``x, y, z`` attributes or 3-sequences. Raises
    :class:`DomainError` if two hits coincide in xy.
    """
    return fit_xyz(*_xyz(h1), *_xyz(h2), *_xyz(h3), bz)


def fit_xyz(x1, y1, z1, x2, y2, z2, x3, y3, z3, bz=2.0) -> ThreeHitHelix:
    ax, ay = x1 - x2, y1 - y2
    bx, by = x3 - x2, y3 - y2
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    cx13, cy13 = x3 - x1, y3 - y1
    c2 = cx13 * cx13 + cy13 * cy13
    if a2 == 0.0 or b2 == 0.0 or c2 == 0.0:
        raise DomainError("two of the three hits coincide in xy")
    cross = ax * by - ay * bx  # a x b; (h2-h1) x (h3-h2) = -cross
    k = -2.0 * cross / math.sqrt(a2 * b2 * c2)
    if abs(k) < STRAIGHT_CURVATURE:
        nb = math.sqrt(b2)
        ux, uy = bx / nb, by / nb
        s3 = nb
        s1 = ax * ux + ay * uy
        return ThreeHitHelix(x2, y2, z2, ux, uy, 0.0, (z3 - z2) / s3, s1, s3, bz)
    d = 2.0 * cross
    rx = -(by * a2 - ay * b2) / d  # hit2 - center
    ry = -(ax * b2 - bx * a2) / d
    R = math.hypot(rx, ry)
    sg = 1.0 if k > 0 else -1.0
    ux, uy = -sg * ry / R, sg * rx / R
    # radius vectors of hits 1 and 3 from the center
    r1x, r1y = ax + rx, ay + ry
    r3x, r3y = bx + rx, by + ry
    if k > 0:
        ang3 = _ccw_angle(rx, ry, r3x, r3y)
        ang1 = _ccw_angle(r1x, r1y, rx, ry)
    else:
        ang3 = _ccw_angle(r3x, r3y, rx, ry)
        ang1 = _ccw_angle(rx, ry, r1x, r1y)
    s3 = ang3 * R
    s1 = -ang1 * R
    k = sg / R
    return ThreeHitHelix(x2, y2, z2, ux, uy, k, (z3 - z2) / s3, s1, s3, bz)


def z_residual(helix: ThreeHitHelix, point) -> float:
    """|z of the helix at the point's azimuth - z of the point|."""
    x, y, z = _xyz(point)
    s = helix.arc_of(x, y)
    return abs(helix.z2 + helix.dzds * s - z)


def extrapolate(helix: ThreeHitHelix, surface: LayerSurface, direction: str = "outward",
                bz: float | None = None, edge_margin: float = 10.0) -> Crossing | None:
    """First crossing of the helix with ``surface``.

    Outward extrapolation starts at hit 3 and moves along the track; inward
    starts at hit 1 and moves against it. ``bz`` optionally overrides the
    field used for the propagation.
    """
    if direction == "outward":
        lh = helix.local(helix.s3, bz)
        return lh.crossing(surface, True, edge_margin)
    if direction == "inward":
        lh = helix.local(helix.s1, bz)
        return lh.crossing(surface, False, edge_margin)
    raise ValueError(f"direction must be 'outward' or 'inward', got {direction!r}")


def momentum_from_helix(helix: ThreeHitHelix, bz: float | None = None) -> tuple[float, TrajectoryState]:
    """Transverse momentum and the trajectory state at hit 3.

    A straight helix gives ``pT = inf`` and a charge-0 state whose momentum
    components are the unit direction.
    """
    bz = helix.bz if bz is None else bz
    lh = helix.local(helix.s3)
    x, y, z = lh.x, lh.y, lh.z
    if helix.k == 0.0 or bz == 0.0:
        return math.inf, TrajectoryState(x, y, z, lh.ux, lh.uy, lh.dzds, 0)
    pt = LORENTZ * abs(bz) * helix.radius
    q = -int(math.copysign(1, helix.k)) * int(math.copysign(1, bz))
    return pt, TrajectoryState(x, y, z, pt * lh.ux, pt * lh.uy, pt * lh.dzds, q)


def line_project(start, through, surface: LayerSurface, margin: float = 0.0) -> tuple[float, float] | None:
    """Project the straight line start -> through onto a surface.

    Returns (phi, t) of the first forward intersection beyond ``start``
    that lies within the surface bounds widened by ``margin``.
    """
    x0, y0, z0 = _xyz(start)
    x1, y1, z1 = _xyz(through)
    return project_line(x0, y0, z0, x1, y1, z1, surface, margin)


def project_line(x0, y0, z0, x1, y1, z1, surface, margin=0.0):
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    if isinstance(surface, Cylinder):
        a = dx * dx + dy * dy
        if a == 0.0:
            return None
        b = x0 * dx + y0 * dy
        c = x0 * x0 + y0 * y0 - surface.radius * surface.radius
        disc = b * b - a * c
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        lam = None
        for cand in ((-b - sq) / a, (-b + sq) / a):
            if cand > 0.0 and (lam is None or cand < lam):
                lam = cand
        if lam is None:
            return None
        x, y, t = x0 + lam * dx, y0 + lam * dy, z0 + lam * dz
    else:
        if dz == 0.0:
            return None
        lam = (surface.z - z0) / dz
        if lam <= 0.0:
            return None
        x, y = x0 + lam * dx, y0 + lam * dy
        t = math.hypot(x, y)
    lo, hi = surface.t_range
    if t < lo - margin or t > hi + margin:
        return None
    return _phi(x, y), t
