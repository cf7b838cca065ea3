"""Perforated-domain geometry: rectangle minus a union of open disks.

All predicates use a shared boundary tolerance of 1e-12; points within the
tolerance of a boundary classify as interior.  Disk membership for the
reflection trigger is closed (boundary counts as inside), handled separately
by :func:`perforation_index`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

BOUNDARY_TOL = 1e-12


class GeometryError(ValueError):
    pass


class DomainCoverageError(GeometryError):
    """Rejection sampling could not find interior points."""


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise GeometryError(f"degenerate rectangle lo={self.lo} hi={self.hi}")

    @property
    def widths(self) -> tuple[float, float]:
        return (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])


@dataclass(frozen=True)
class Perforation:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"perforation radius must be positive, got {self.radius}")


class Region(Enum):
    INTERIOR = "interior"
    IN_PERFORATION = "in_perforation"
    OUTSIDE_RECT = "outside_rect"


class PointClass(NamedTuple):
    region: Region
    index: Optional[int]  # perforation index when region is IN_PERFORATION


@dataclass
class PerforatedDomain:
    rect: Rect
    perforations: list[Perforation] = field(default_factory=list)

    def __post_init__(self):
        # Cached arrays for vectorized membership tests.
        n = len(self.perforations)
        self._centers = np.array([p.center for p in self.perforations], dtype=float).reshape(n, 2)
        self._radii = np.array([p.radius for p in self.perforations], dtype=float)

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def radii(self) -> np.ndarray:
        return self._radii

    @property
    def min_radius(self) -> float:
        if len(self.perforations) == 0:
            return float("inf")
        return float(self._radii.min())

    def area(self) -> float:
        w = self.rect.widths
        return w[0] * w[1] - float(np.sum(np.pi * self._radii**2))


def classify_point(d: PerforatedDomain, p: Sequence[float]) -> PointClass:
    """Locate p: interior, inside a perforation, or outside the rectangle.

    Points within BOUNDARY_TOL of the rectangle or a perforation boundary
    classify as interior.
    """
    x, y = float(p[0]), float(p[1])
    lo, hi = d.rect.lo, d.rect.hi
    if (x < lo[0] - BOUNDARY_TOL or x > hi[0] + BOUNDARY_TOL
            or y < lo[1] - BOUNDARY_TOL or y > hi[1] + BOUNDARY_TOL):
        return PointClass(Region.OUTSIDE_RECT, None)
    i = perforation_index(d, p, tol=-BOUNDARY_TOL)
    if i >= 0:
        return PointClass(Region.IN_PERFORATION, i)
    return PointClass(Region.INTERIOR, None)


def perforation_index(d: PerforatedDomain, p: Sequence[float], tol: float = 0.0) -> int:
    """Index of the perforation whose disk of radius (r + tol) contains p, or -1.

    tol=0 tests the closed disk (reflection trigger); tol=-BOUNDARY_TOL shrinks
    it so boundary points fall outside (classification convention).
    """
    if len(d.perforations) == 0:
        return -1
    dx = d._centers[:, 0] - float(p[0])
    dy = d._centers[:, 1] - float(p[1])
    inside = dx * dx + dy * dy <= (d._radii + tol) ** 2
    hits = np.nonzero(inside)[0]
    return int(hits[0]) if hits.size else -1


def interior_mask(d: PerforatedDomain, points: np.ndarray, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Vectorized interior test for an (n, 2) array (boundary-tolerant)."""
    lo, hi = d.rect.lo, d.rect.hi
    m = ((points[:, 0] >= lo[0] - tol) & (points[:, 0] <= hi[0] + tol)
         & (points[:, 1] >= lo[1] - tol) & (points[:, 1] <= hi[1] + tol))
    for c, r in zip(d._centers, d._radii):
        dx = points[:, 0] - c[0]
        dy = points[:, 1] - c[1]
        m &= dx * dx + dy * dy > (r - tol) ** 2
    return m


def segment_domain_exit(
    d: PerforatedDomain, a: Sequence[float], b: Sequence[float]
) -> Optional[tuple[np.ndarray, float]]:
    """First crossing of the segment a->b with the rectangle boundary.

    Returns (exit_point, alpha) with alpha the segment parameter of the
    crossing, or None when the segment stays inside (or is degenerate).
    The first crossing in parameter order governs (walker time ordering).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    delta = b - a
    if delta[0] == 0.0 and delta[1] == 0.0:
        return None
    lo, hi = d.rect.lo, d.rect.hi
    t_min = np.inf
    hit_axis = -1
    hit_val = 0.0
    for axis in range(2):
        for edge in (lo[axis], hi[axis]):
            if delta[axis] == 0.0:
                continue
            t = (edge - a[axis]) / delta[axis]
            if 0.0 < t <= 1.0 and t < t_min:
                other = a[1 - axis] + t * delta[1 - axis]
                if lo[1 - axis] - BOUNDARY_TOL <= other <= hi[1 - axis] + BOUNDARY_TOL:
                    t_min = t
                    hit_axis = axis
                    hit_val = edge
    if hit_axis < 0:
        return None
    exit_point = a + t_min * delta
    exit_point[hit_axis] = hit_val  # land exactly on the edge
    return exit_point, float(t_min)


def project_to_circle(perf: Perforation, y: Sequence[float]) -> np.ndarray:
    """Radial projection of y onto the perforation boundary."""
    y = np.asarray(y, dtype=float)
    v = y - np.asarray(perf.center, dtype=float)
    norm = float(np.hypot(v[0], v[1]))
    if norm < 1e-14:
        raise GeometryError("projection undefined at center")
    return np.asarray(perf.center, dtype=float) + (perf.radius / norm) * v


def sample_collocation(d: PerforatedDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n interior points, uniform on rect minus perforations (rejection).

    Attempt cap is 1000 * n; exceeding it means the perforations nearly cover
    the rectangle.
    """
    if n == 0:
        return np.empty((0, 2))
    lo = np.asarray(d.rect.lo)
    w = np.asarray(d.rect.widths)
    out = np.empty((n, 2))
    got = 0
    attempts = 0
    cap = 1000 * n
    while got < n:
        batch = min(max(n - got, 1024), cap - attempts)
        if batch <= 0:
            raise DomainCoverageError("domain nearly covered")
        cand = lo + w * rng.random((batch, 2))
        attempts += batch
        ok = interior_mask(d, cand, tol=BOUNDARY_TOL)
        # strict interior only: reject rect-boundary grazers as well
        acc = cand[ok]
        take = min(acc.shape[0], n - got)
        out[got:got + take] = acc[:take]
        got += take
    return out


def validate_configuration(d: PerforatedDomain) -> list[str]:
    """Invariant violations as strings; empty list means a valid domain."""
    violations = []
    lo, hi = d.rect.lo, d.rect.hi
    for i, p in enumerate(d.perforations):
        if (p.center[0] - p.radius <= lo[0] or p.center[0] + p.radius >= hi[0]
                or p.center[1] - p.radius <= lo[1] or p.center[1] + p.radius >= hi[1]):
            violations.append(f"protrudes({i})")
    for i in range(len(d.perforations)):
        for j in range(i + 1, len(d.perforations)):
            pi, pj = d.perforations[i], d.perforations[j]
            dist = float(np.hypot(pi.center[0] - pj.center[0], pi.center[1] - pj.center[1]))
            if dist <= pi.radius + pj.radius:
                violations.append(f"overlap({i},{j})")
    return violations


def lattice_perforations(rect: Rect, nx: int, ny: int, radius: float) -> list[Perforation]:
    """nx-by-ny grid of equal disks at cell centers of the rectangle."""
    w = rect.widths
    out = []
    for i in range(nx):
        for j in range(ny):
            cx = rect.lo[0] + (i + 0.5) * w[0] / nx
            cy = rect.lo[1] + (j + 0.5) * w[1] / ny
            out.append(Perforation((cx, cy), radius))
    return out
