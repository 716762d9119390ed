"""Periodic scatterer configurations and their validation.

A table is a finite list of discs in the unit cell, repeated over Z^2.  Before
any dynamics run, the table must pass ``validate_table``: exact pairwise
disjointness, a corridor scan over rational directions (complete whenever
n_dirs >= 1/(2 r_max), which covers every practical table), and Monte Carlo
free-flight sampling that produces the working horizon bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS_SEP = 1e-9
EPS_GRAZE = 1e-8
T_EPS = 1e-12

# max distance from (0.5,0.5) to any boundary point of a fundamental-cell disc
_REACH = 1.41422
# provisional free-flight cap used while sampling before a bound is known
_PROVISIONAL_HORIZON = 64.0


class TableError(ValueError):
    """Invalid scatterer configuration."""


class OverlapError(TableError):
    def __init__(self, i, j, cell, dist, rsum):
        self.pair = (i, j, cell)
        super().__init__(
            f"scatterers {i} and {j}+{cell} overlap: "
            f"distance {dist:.6g} <= {rsum:.6g} + margin"
        )


class CorridorError(TableError):
    def __init__(self, direction, gap):
        self.direction = direction
        self.gap = gap
        super().__init__(
            f"unblocked corridor in direction {direction}, free width {gap:.6g}"
        )


class NoCollisionWithinBound(RuntimeError):
    """A ray exceeded the validated horizon bound; the table is not trusted."""


@dataclass(frozen=True)
class ScattererSpec:
    """One disc: center in the fundamental cell [0,1)^2, radius in (0, 1/2)."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        x, y = self.center
        if not (0.0 <= x < 1.0 and 0.0 <= y < 1.0):
            raise TableError(f"center {self.center} outside [0,1)^2")
        if not (0.0 < self.radius < 0.5):
            raise TableError(f"radius {self.radius} not in (0, 1/2)")

    @property
    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


class PackedGeometry:
    """Flat candidate arrays consumed by the kernels.

    Candidate discs are all translates with cell in [-reach, reach]^2, sorted
    by distance of their center from (0.5, 0.5) so the kernels can stop the
    scan early (a candidate at sorted distance s cannot be hit before
    t = s - 1.41422 - r_max).
    """

    def __init__(self, table: "BilliardTable", horizon: float):
        centers = np.array([s.center for s in table.scatterers], dtype=np.float64)
        radii = np.array([s.radius for s in table.scatterers], dtype=np.float64)
        reach = int(math.ceil(horizon)) + 2
        cells = np.arange(-reach, reach + 1)
        mx, my, di = np.meshgrid(cells, cells, np.arange(len(radii)), indexing="ij")
        mx = mx.ravel()
        my = my.ravel()
        di = di.ravel()
        cx = centers[di, 0] + mx
        cy = centers[di, 1] + my
        s = np.hypot(cx - 0.5, cy - 0.5)
        order = np.argsort(s, kind="stable")
        self.cand_cx = np.ascontiguousarray(cx[order])
        self.cand_cy = np.ascontiguousarray(cy[order])
        self.cand_r = np.ascontiguousarray(radii[di[order]])
        self.cand_s = np.ascontiguousarray(s[order])
        self.cand_disc = np.ascontiguousarray(di[order], dtype=np.int32)
        self.cand_mx = np.ascontiguousarray(mx[order], dtype=np.int32)
        self.cand_my = np.ascontiguousarray(my[order], dtype=np.int32)
        self.centers0 = np.ascontiguousarray(centers)
        self.radii0 = np.ascontiguousarray(radii)
        self.r_max = float(radii.max())
        self.horizon = float(horizon)
        self.t_eps = T_EPS


@dataclass
class BilliardTable:
    """Z^2-periodic disc configuration with validation state."""

    scatterers: list[ScattererSpec]
    horizon_bound: float | None = None
    validated: bool = False
    psi_set: frozenset[tuple[int, int]] | None = None
    corridor_complete: bool = False
    mean_flight_sampled: float | None = None
    _geom: PackedGeometry | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.scatterers) < 1:
            raise TableError("at least one scatterer required")

    @property
    def n_scatterers(self) -> int:
        return len(self.scatterers)

    @property
    def total_perimeter(self) -> float:
        return sum(s.perimeter for s in self.scatterers)

    @property
    def free_area(self) -> float:
        return 1.0 - sum(s.area for s in self.scatterers)

    @property
    def mean_free_path(self) -> float:
        """Santalo formula for the billiard map: pi * |free region| / |boundary|."""
        return math.pi * self.free_area / self.total_perimeter

    def geometry(self) -> PackedGeometry:
        if not self.validated or self.horizon_bound is None:
            raise TableError("table not validated; call validate_table first")
        if self._geom is None or self._geom.horizon != self.horizon_bound:
            self._geom = PackedGeometry(self, self.horizon_bound)
        return self._geom

    def require_validated(self):
        if not self.validated:
            raise TableError("table not validated; call validate_table first")


def default_table() -> BilliardTable:
    """The two-disc reference table used across tests and shipped configs."""
    return BilliardTable(
        [
            ScattererSpec(center=(0.0, 0.0), radius=0.45),
            ScattererSpec(center=(0.5, 0.5), radius=0.2),
        ]
    )


def check_disjoint(table: BilliardTable):
    """Exact pairwise disjointness over all neighbor translates.

    Radii are < 1/2, so only translates at Chebyshev distance <= 1 can touch.
    """
    n = table.n_scatterers
    for i in range(n):
        ci = np.array(table.scatterers[i].center)
        ri = table.scatterers[i].radius
        for j in range(n):
            cj = np.array(table.scatterers[j].center)
            rj = table.scatterers[j].radius
            for ax in (-1, 0, 1):
                for ay in (-1, 0, 1):
                    if j == i and ax == 0 and ay == 0:
                        continue
                    if j < i and ax == 0 and ay == 0:
                        continue  # counted as (j, i, (0,0))
                    d = float(np.hypot(*(cj + (ax, ay) - ci)))
                    if d <= ri + rj + EPS_SEP:
                        raise OverlapError(i, j, (ax, ay), d, ri + rj)


def _primitive_directions(n_dirs: int):
    """Primitive lattice directions (p,q), one per line through the origin."""
    dirs = [(1, 0), (0, 1)]
    for p in range(1, n_dirs + 1):
        for q in range(-n_dirs, n_dirs + 1):
            if q == 0:
                continue
            if math.gcd(p, abs(q)) == 1:
                dirs.append((p, q))
    return dirs


def check_corridors(table: BilliardTable, n_dirs: int = 8):
    """Scan rational directions for unblocked infinite strips.

    Lines of direction (p,q) project the disc set onto a normal axis where the
    lattice contributes spacing h = 1/||(p,q)||; the direction is blocked iff
    the projected intervals cover a full period.  Any direction with
    ||(p,q)|| >= 1/(2 r_max) is blocked by the largest disc alone, so the scan
    is a complete decision procedure once n_dirs >= 1/(2 r_max).
    """
    r_max = max(s.radius for s in table.scatterers)
    complete = n_dirs >= 1.0 / (2.0 * r_max)
    for p, q in _primitive_directions(n_dirs):
        h = 1.0 / math.hypot(p, q)
        nx, ny = -q * h, p * h
        intervals = []
        for s in table.scatterers:
            proj = (s.center[0] * nx + s.center[1] * ny) % h
            lo, hi = proj - s.radius, proj + s.radius
            if hi - lo >= h:
                intervals = [(0.0, h)]
                break
            lo %= h
            hi = lo + 2.0 * s.radius
            if hi <= h:
                intervals.append((lo, hi))
            else:
                intervals.append((lo, h))
                intervals.append((0.0, hi - h))
        intervals.sort()
        covered = 0.0
        gap_at = None
        for lo, hi in intervals:
            if lo > covered + 1e-15:
                gap_at = (covered, lo)
                break
            covered = max(covered, hi)
        if gap_at is None and covered < h - 1e-15:
            gap_at = (covered, h)
        if gap_at is not None:
            raise CorridorError((p, q), gap_at[1] - gap_at[0])
    return complete


def validate_table(
    table: BilliardTable,
    n_dirs: int = 8,
    n_rays: int = 100_000,
    rng: np.random.Generator | int | None = None,
) -> float:
    """Validate disjointness and finite horizon; returns the horizon bound.

    The bound is the largest free flight over ``n_rays`` sampled boundary rays,
    inflated by 10%.  Sampling also freezes the observed set of cell jumps.
    Raises OverlapError / CorridorError on a bad table.
    """
    from . import _kernels

    check_disjoint(table)
    complete = check_corridors(table, n_dirs)

    if rng is None or isinstance(rng, int):
        rng = np.random.Generator(np.random.Philox(key=0 if rng is None else rng))
    geom = PackedGeometry(table, _PROVISIONAL_HORIZON)

    perims = np.array([s.perimeter for s in table.scatterers])
    probs = perims / perims.sum()
    scat = rng.choice(len(probs), size=n_rays, p=probs).astype(np.int32)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n_rays)
    phi = np.arcsin(2.0 * rng.random(n_rays) - 1.0)

    _, _, _, jx, jy, flight, _ = _kernels.step_batch(geom, scat, theta, phi)
    missed = flight < 0.0
    if missed.any():
        i = int(np.argmax(missed))
        v = (math.cos(theta[i] + phi[i]), math.sin(theta[i] + phi[i]))
        raise CorridorError(v, math.nan)

    bound = 1.1 * float(flight.max())
    table.horizon_bound = bound
    table.validated = True
    table.corridor_complete = complete
    table.mean_flight_sampled = float(flight.mean())
    table.psi_set = frozenset(zip(jx.tolist(), jy.tolist()))
    table._geom = None
    return bound
