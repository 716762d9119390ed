"""Collision map of the Z^2-periodic Lorentz gas on a validated table.

Phase points are outgoing (post-collision) unit vectors parameterized by
(scatterer index, boundary angle theta, reflection angle phi); phi is measured
from the outward normal, so the flight direction is at angle theta + phi and
cos(phi) > 0.  The quotient map returns to the fundamental cell after every
collision and emits the integer cell displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .extension import ExtensionSystem
from .geometry import (
    EPS_GRAZE,
    BilliardTable,
    NoCollisionWithinBound,
)


@dataclass(frozen=True)
class PhasePoint:
    """Outgoing reflected vector on the quotient cell."""

    scatterer: int
    theta: float
    phi: float

    def __post_init__(self):
        if not (-math.pi / 2 < self.phi < math.pi / 2):
            raise ValueError(f"phi {self.phi} outside (-pi/2, pi/2)")

    def direction(self) -> tuple[float, float]:
        a = self.theta + self.phi
        return (math.cos(a), math.sin(a))

    def normal(self) -> tuple[float, float]:
        return (math.cos(self.theta), math.sin(self.theta))

    def position(self, table: BilliardTable) -> tuple[float, float]:
        s = table.scatterers[self.scatterer]
        return (
            s.center[0] + s.radius * math.cos(self.theta),
            s.center[1] + s.radius * math.sin(self.theta),
        )


@dataclass(frozen=True)
class ExtendedPhasePoint:
    """Quotient phase point plus the lattice cell it lives in."""

    base: PhasePoint
    cell: tuple[int, int]


@dataclass(frozen=True)
class CollisionRecord:
    next: PhasePoint
    psi: tuple[int, int]
    flight: float
    grazing: bool = False


@dataclass
class BilliardBatch:
    """Structure-of-arrays batch of phase points with grazing bookkeeping."""

    scat: np.ndarray  # int32[N]
    theta: np.ndarray
    phi: np.ndarray
    min_cos: np.ndarray  # running min of cos(phi) along each orbit
    ok: np.ndarray  # bool[N], False after a horizon violation

    @classmethod
    def new(cls, scat, theta, phi):
        return cls(
            scat=np.ascontiguousarray(scat, dtype=np.int32),
            theta=np.ascontiguousarray(theta, dtype=np.float64),
            phi=np.ascontiguousarray(phi, dtype=np.float64),
            min_cos=np.cos(phi),
            ok=np.ones(len(scat), dtype=bool),
        )

    @property
    def n(self) -> int:
        return self.scat.shape[0]


def reflect(incoming, normal):
    """Specular reflection v' = v - 2<v,n>n."""
    vx, vy = incoming
    nx, ny = normal
    d = vx * nx + vy * ny
    return (vx - 2.0 * d * nx, vy - 2.0 * d * ny)


def time_reversal(x: PhasePoint) -> PhasePoint:
    """Velocity reversal re-expressed as an outgoing vector; an involution."""
    return replace(x, phi=-x.phi)


def next_collision(position, direction, table: BilliardTable) -> CollisionRecord:
    """Earliest disc hit along a ray from an arbitrary free position.

    The start is pushed off by 1e-12 along the ray so boundary starts do not
    self-intersect; psi is the lattice cell of the hit translate (the source
    frame is cell 0).
    """
    from ._kernels import _pure

    table.require_validated()
    geom = table.geometry()
    qx = np.array([position[0] + 1e-12 * direction[0]])
    qy = np.array([position[1] + 1e-12 * direction[1]])
    vx = np.array([float(direction[0])])
    vy = np.array([float(direction[1])])
    t, k = _pure._scan(geom, qx, qy, vx, vy)
    if k[0] < 0:
        raise NoCollisionWithinBound(
            f"no collision within horizon {geom.horizon:.4g} from {position}"
        )
    kk = int(k[0])
    flight = float(t[0]) + 1e-12
    cx, cy, r = geom.cand_cx[kk], geom.cand_cy[kk], geom.cand_r[kk]
    px = qx[0] + t[0] * vx[0]
    py = qy[0] + t[0] * vy[0]
    nx, ny = (px - cx) / r, (py - cy) / r
    vxr, vyr = reflect((vx[0], vy[0]), (nx, ny))
    cos_phi = vxr * nx + vyr * ny
    sin_phi = nx * vyr - ny * vxr
    nxt = PhasePoint(
        scatterer=int(geom.cand_disc[kk]),
        theta=math.atan2(ny, nx),
        phi=math.atan2(sin_phi, cos_phi),
    )
    return CollisionRecord(
        next=nxt,
        psi=(int(geom.cand_mx[kk]), int(geom.cand_my[kk])),
        flight=flight,
        grazing=abs(cos_phi) < EPS_GRAZE,
    )


def billiard_map(x: PhasePoint, table: BilliardTable):
    """Quotient collision map; returns (next phase point, cell displacement)."""
    table.require_validated()
    geom = table.geometry()
    s2, th2, ph2, jx, jy, flight, _ = _kernels.step_batch(
        geom,
        np.array([x.scatterer], dtype=np.int32),
        np.array([x.theta]),
        np.array([x.phi]),
    )
    if flight[0] < 0:
        raise NoCollisionWithinBound(f"horizon violated from {x}")
    return PhasePoint(int(s2[0]), float(th2[0]), float(ph2[0])), (int(jx[0]), int(jy[0]))


def lorentz_map(x: ExtendedPhasePoint, table: BilliardTable) -> ExtendedPhasePoint:
    """Skew-product step: quotient map on the base, psi added to the cell."""
    base, psi = billiard_map(x.base, table)
    return ExtendedPhasePoint(base, (x.cell[0] + psi[0], x.cell[1] + psi[1]))


def sample_boundary(table: BilliardTable, n: int, gen: np.random.Generator):
    """Invariant-measure sample: perimeter-weighted disc, uniform theta,
    phi = arcsin(2U - 1) (density proportional to cos phi)."""
    perims = np.array([s.perimeter for s in table.scatterers])
    probs = perims / perims.sum()
    scat = gen.choice(len(probs), size=n, p=probs).astype(np.int32)
    theta = gen.uniform(0.0, 2.0 * math.pi, size=n)
    phi = np.arcsin(2.0 * gen.random(n) - 1.0)
    return scat, theta, phi


def sample_mu_bar(table: BilliardTable, gen: np.random.Generator) -> PhasePoint:
    table.require_validated()
    scat, theta, phi = sample_boundary(table, 1, gen)
    return PhasePoint(int(scat[0]), float(theta[0]), float(phi[0]))


def itinerary(x: PhasePoint, table: BilliardTable, k_back: int, k_fwd: int):
    """Symbols (scatterer, psi) of collisions j = -k_back..k_fwd along the orbit.

    Returns (list of (scatterer, (dx, dy)), grazing_flag).  Two points lie in
    the same continuity component of depth (k_back, k_fwd) iff their
    sequences agree.
    """
    sys = BilliardSystem(table)
    batch = sys.singleton_batch(x)
    sym = sys.window_symbols(batch, k_back, k_fwd)
    grazing = bool(batch.min_cos[0] < EPS_GRAZE) or bool(sys._last_window_graze[0])
    out = [
        (int(sym[0, j, 0]), (int(sym[0, j, 1]), int(sym[0, j, 2])))
        for j in range(sym.shape[1])
    ]
    return out, grazing


class BilliardSystem(ExtensionSystem):
    """ExtensionSystem facade over a validated table, kernel-accelerated."""

    d = 2
    deterministic = True
    lattice_period = 1

    def __init__(self, table: BilliardTable, num_threads: int = 0):
        table.require_validated()
        self.table = table
        self.geom = table.geometry()
        self.num_threads = num_threads
        self._last_window_graze = np.zeros(0, dtype=bool)

    # -- core protocol ------------------------------------------------------

    def sample_batch(self, n, gen):
        scat, theta, phi = sample_boundary(self.table, n, gen)
        return BilliardBatch.new(scat, theta, phi)

    def singleton_batch(self, x: PhasePoint):
        return BilliardBatch.new(
            np.array([x.scatterer]), np.array([x.theta]), np.array([x.phi])
        )

    def point_of(self, batch, i: int = 0) -> PhasePoint:
        return PhasePoint(
            int(batch.scat[i]), float(batch.theta[i]), float(batch.phi[i])
        )

    def state_ids(self, batch):
        return batch.scat

    def batch_size(self, batch):
        return batch.n

    def excluded_mask(self, batch):
        return (batch.min_cos < EPS_GRAZE) | ~batch.ok

    def step_batch(self, batch, gen=None):
        s2, th2, ph2, jx, jy, flight, cos_out = _kernels.step_batch(
            self.geom, batch.scat, batch.theta, batch.phi, self.num_threads
        )
        ok = batch.ok & (flight >= 0.0)
        good = flight >= 0.0
        out = BilliardBatch(
            scat=np.where(good, s2, batch.scat).astype(np.int32),
            theta=np.where(good, th2, batch.theta),
            phi=np.where(good, ph2, batch.phi),
            min_cos=np.where(good, np.minimum(batch.min_cos, cos_out), batch.min_cos),
            ok=ok,
        )
        jumps = np.stack([np.where(good, jx, 0), np.where(good, jy, 0)], axis=1)
        return out, jumps

    # -- kernel fast paths ----------------------------------------------------

    def trace_checkpoints(self, batch, checkpoints, gen=None):
        cps = np.asarray(sorted(checkpoints), dtype=np.int64)
        scat_cp, th_cp, ph_cp, sx, sy, min_cos, ok = _kernels.trace_batch(
            self.geom, batch.scat, batch.theta, batch.phi, cps, self.num_threads
        )
        batches = []
        for j in range(cps.shape[0]):
            batches.append(
                BilliardBatch(
                    scat=np.ascontiguousarray(scat_cp[:, j]),
                    theta=np.ascontiguousarray(th_cp[:, j]),
                    phi=np.ascontiguousarray(ph_cp[:, j]),
                    min_cos=np.minimum(batch.min_cos, min_cos),
                    ok=batch.ok & (ok == 1),
                )
            )
        sums = np.stack([sx, sy], axis=2)
        return batches, sums

    def trace_jumps(self, batch, n_steps, gen=None):
        s2, th2, ph2, jx, jy, min_cos, ok = _kernels.trace_jumps(
            self.geom, batch.scat, batch.theta, batch.phi, n_steps, self.num_threads
        )
        out = BilliardBatch(
            scat=s2,
            theta=th2,
            phi=ph2,
            min_cos=np.minimum(batch.min_cos, min_cos),
            ok=batch.ok & (ok == 1),
        )
        jumps = np.stack(
            [jx.astype(np.int64), jy.astype(np.int64)], axis=2
        )
        return out, jumps

    def first_return(self, batch, cap, gen=None):
        times, _, ok = _kernels.first_return_batch(
            self.geom, batch.scat, batch.theta, batch.phi, cap, self.num_threads
        )
        if not ok.all():
            raise NoCollisionWithinBound("horizon violated during return scan")
        return times

    # -- itineraries ----------------------------------------------------------

    def reversed_batch(self, batch):
        return BilliardBatch(
            scat=batch.scat.copy(),
            theta=batch.theta.copy(),
            phi=-batch.phi,
            min_cos=batch.min_cos.copy(),
            ok=batch.ok.copy(),
        )

    def window_symbols(self, batch, k_back, k_fwd, gen=None):
        """Symbols for steps -k_back..k_fwd; backward part via time reversal.

        Along the reversed orbit, the m-th collision carries the scatterer of
        step -m and minus the jump emitted by step -(m-1) -> -m reversed, i.e.
        symbol(-m) = (scatterer(z_m), -jump(z_{m-1} -> z_m)) for z_0 = Rx.
        """
        n = batch.n
        w = k_back + k_fwd + 1
        sym = np.empty((n, w, 3), dtype=np.int32)
        graze = np.zeros(n, dtype=bool)

        z = self.reversed_batch(batch)
        for m in range(1, k_back + 1):
            z, jumps = self.step_batch(z)
            sym[:, k_back - m, 0] = z.scat
            sym[:, k_back - m, 1] = -jumps[:, 0]
            sym[:, k_back - m, 2] = -jumps[:, 1]
        if k_back > 0:
            graze |= self.excluded_mask(z)

        f = batch
        for j in range(k_fwd + 1):
            sym[:, k_back + j, 0] = f.scat
            f, jumps = self.step_batch(f)
            sym[:, k_back + j, 1] = jumps[:, 0]
            sym[:, k_back + j, 2] = jumps[:, 1]
        graze |= self.excluded_mask(f)
        self._last_window_graze = graze
        return sym

    def correlation_trace(self, batch, n_grid, k_u, k_v, gen=None):
        """Deterministic fast path: checkpoint at n - k_v, extend 2k_v+1 steps."""
        from .extension import CorrelationTrace

        n_grid = sorted(n_grid)
        if n_grid and n_grid[0] < k_v:
            raise ValueError("n must be >= window half-width")
        cps = [m - k_v for m in n_grid]
        batches, sums_cp = self.trace_checkpoints(batch, cps, gen)
        sym0 = self.window_symbols(batch, k_u, k_u)
        graze0 = self._last_window_graze.copy()

        sym_n = {}
        sums = {}
        excl = np.zeros(batch.n, dtype=bool)
        for idx, m in enumerate(n_grid):
            b = batches[idx]
            sym = self.window_symbols(b, 0, 2 * k_v)
            sym_n[m] = sym
            s = sums_cp[:, idx, :].copy()
            for t in range(k_v):
                s[:, 0] += sym[:, t, 1]
                s[:, 1] += sym[:, t, 2]
            sums[m] = s
            excl |= self._last_window_graze | self.excluded_mask(b)
        excl |= graze0
        return CorrelationTrace(sym0=sym0, sym_n=sym_n, sums=sums, excluded=excl)
