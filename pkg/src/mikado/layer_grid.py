"""Regular (phi, t) grid over one layer's hits.

Layout (columns are phi, rows are t, flat index ``col * n_rows + row``)::

    col 0            empty border
    col 1            copies of hits from just below +pi, shifted by -2pi
    cols 2..n_phi+1  interior, covering [-pi, pi)
    col n_phi+2      copies of hits from just above -pi, shifted by +2pi
    col n_phi+3      empty border

with one empty border row below and above the interior rows. The hit array
holds each hit (and each overlap copy) once, ordered by cell, and every cell
is a ``(first, count)`` slice of it. A query window no larger than one cell
touches at most 2x2 cells, and the overlap columns make the +-pi seam
invisible to it.
"""
from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * math.pi
MAX_CELLS = 1 << 20
MIN_CELLS = 4096  # sparse layers never shrink below this many cells
CELLS_PER_HIT = 8


class GridHit(NamedTuple):
    phi: float
    t: float
    x: float
    y: float
    z: float
    hit_id: int
    bz_seed: float = 2.0
    bz_in: float = 2.0
    bz_out: float = 2.0


class LayerGrid:
    """Two-array grid. Build with :meth:`build`; immutable afterwards."""

    __slots__ = ("dphi", "dt", "n_phi", "n_t", "n_rows", "phi_lo", "t_lo", "hits",
                 "cell_first", "cell_count", "n_source", "_start", "_phi", "_t")

    @classmethod
    def build(cls, hits: Sequence[GridHit], cell_size: tuple[float, float],
              t_range: tuple[float, float] | None = None) -> "LayerGrid":
        """Bin ``hits`` into cells at least as large as ``cell_size``.

        The phi and t extents are divided into whole numbers of cells, so the
        actual cell may be slightly larger than requested. Sparse layers get
        coarser cells still: the cell count is capped near ``CELLS_PER_HIT``
        per hit, which keeps building cheap without changing query results.
        """
        dphi_req, dt_req = (float(c) for c in cell_size)
        if not (dphi_req > 0 and dt_req > 0):
            raise ValidationError(f"cell size must be positive, got {cell_size}")
        if dphi_req > math.pi:
            raise ValidationError(f"phi cell size {dphi_req} exceeds pi")
        self = cls.__new__(cls)

        n = len(hits)
        phi = np.fromiter((h.phi for h in hits), float, n)
        t = np.fromiter((h.t for h in hits), float, n)
        phi[phi >= math.pi] = -math.pi  # +pi and -pi are one angle; bin it at the low edge

        if t_range is None:
            t_range = (float(t.min()), float(t.max())) if n else (0.0, 1.0)
        lo, hi = t_range
        if n:
            lo, hi = min(lo, float(t.min())), max(hi, float(t.max()))
        if hi <= lo:
            hi = lo + dt_req

        n_phi = max(1, int(TWO_PI // dphi_req))
        n_t = max(1, int((hi - lo) // dt_req))
        cap = min(MAX_CELLS, max(MIN_CELLS, CELLS_PER_HIT * n))
        while (n_phi + 4) * (n_t + 2) > cap and (n_phi > 1 or n_t > 1):
            if n_t >= n_phi and n_t > 1:
                n_t = (n_t + 1) // 2
            else:
                n_phi = max(1, (n_phi + 1) // 2)
        self.n_phi, self.n_t = n_phi, n_t
        self.dphi = TWO_PI / n_phi
        self.dt = (hi - lo) / n_t
        self.n_rows = n_t + 2
        self.phi_lo = -math.pi - 2.0 * self.dphi
        self.t_lo = lo - self.dt
        self.n_source = n

        # overlap copies: one column's worth on each side of the seam
        low_copy = np.nonzero(phi >= math.pi - self.dphi)[0]
        high_copy = np.nonzero(phi < -math.pi + self.dphi)[0]
        src = np.concatenate([np.arange(n), low_copy, high_copy])
        ephi = np.concatenate([phi, phi[low_copy] - TWO_PI, phi[high_copy] + TWO_PI])
        et = t[src]

        col = np.floor((ephi - self.phi_lo) / self.dphi).astype(np.int64)
        col[:n] = np.clip(col[:n], 2, n_phi + 1)
        col[n:n + len(low_copy)] = 1
        col[n + len(low_copy):] = n_phi + 2
        row = np.floor((et - self.t_lo) / self.dt).astype(np.int64)
        np.clip(row, 1, n_t, out=row)
        cell = col * self.n_rows + row

        n_cells = (n_phi + 4) * self.n_rows
        # counting pass, prefix offsets, then a stable scatter by cell
        counts = np.bincount(cell, minlength=n_cells)
        start = np.zeros(n_cells + 1, dtype=np.int64)
        np.cumsum(counts, out=start[1:])
        order = np.argsort(cell, kind="stable")
        self.cell_first = start[:-1].copy()
        self.cell_count = counts

        entries = []
        for i in order.tolist():
            s = int(src[i])
            h = hits[s]
            p = float(ephi[i])
            entries.append(h if p == h.phi else h._replace(phi=p))
        self.hits = entries
        self._start = start.tolist()
        self._phi = [h.phi for h in entries]
        self._t = [h.t for h in entries]
        return self

    @property
    def cell_size(self) -> tuple[float, float]:
        return (self.dphi, self.dt)

    @property
    def n_cols(self) -> int:
        return self.n_phi + 4

    def cell_hits(self, col: int, row: int) -> list[GridHit]:
        i = col * self.n_rows + row
        return self.hits[self._start[i]:self._start[i + 1]]

    def interior_count(self) -> int:
        c = self.cell_count.reshape(self.n_cols, self.n_rows)
        return int(c[2:self.n_phi + 2, 1:self.n_t + 1].sum())

    def query(self, phi: float, t: float, window: tuple[float, float] | None = None) -> list[GridHit]:
        """Hits with |dphi| <= window_phi/2 and |dt| <= window_t/2.

        ``window`` defaults to the cell size and must not exceed it.
        """
        if window is None:
            wphi, wt = self.dphi, self.dt
        else:
            wphi, wt = window
        hp = 0.5 * wphi
        ht = 0.5 * wt
        if not (-math.pi < phi <= math.pi):
            phi = math.remainder(phi, TWO_PI)
        col = int((phi - hp - self.phi_lo) // self.dphi)
        row = int((t - ht - self.t_lo) // self.dt)
        if row < 0:
            row = 0
        elif row > self.n_t:
            row = self.n_t
        start = self._start
        phis, ts, hs = self._phi, self._t, self.hits
        out = []
        nr = self.n_rows
        for c in (col, col + 1):
            i = c * nr + row
            for k in range(start[i], start[i + 2]):
                if abs(phis[k] - phi) <= hp and abs(ts[k] - t) <= ht:
                    out.append(hs[k])
        return out


def check_window(grid: LayerGrid, window: tuple[float, float]) -> None:
    if window[0] > grid.dphi * (1 + 1e-12) or window[1] > grid.dt * (1 + 1e-12):
        raise ValidationError(f"window {window} exceeds grid cell {grid.cell_size}")


def retain(hits: Sequence, alive_mask: Sequence[bool]) -> list:
    """Hits whose mask entry is true, in input order."""
    if len(hits) != len(alive_mask):
        raise ValidationError("mask length differs from hit count")
    return [h for h, keep in zip(hits, alive_mask) if keep]


def linear_scan(hits: Iterable[GridHit], phi: float, t: float, window: tuple[float, float]) -> list[GridHit]:
    """Reference window search over all hits with explicit angle wrapping."""
    hp, ht = 0.5 * window[0], 0.5 * window[1]
    out = []
    for h in hits:
        d = math.remainder(h.phi - phi, TWO_PI)
        if abs(d) <= hp and abs(h.t - t) <= ht:
            out.append(h)
    return out


class ScanIndex:
    """Grid-free stand-in exposing the same ``query`` as :class:`LayerGrid`."""

    __slots__ = ("hits", "window")

    def __init__(self, hits: Sequence[GridHit], window: tuple[float, float]):
        self.hits = list(hits)
        self.window = window

    def query(self, phi, t, window=None):
        return linear_scan(self.hits, phi, t, self.window if window is None else window)
