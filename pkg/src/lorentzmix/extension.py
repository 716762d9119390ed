"""Z^d-extension layer over an arbitrary base system.

A system supplies batch sampling from its invariant measure and a batch step
emitting integer lattice jumps.  Everything here works on exact integer
cocycle sums S_n; the pathwise renewal identity decomposes time n by the last
visit of S to zero and must hold on every orbit of every system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


class ExtensionSystem:
    """Base system of a Z^d-extension: batch dynamics plus jump labels.

    Subclasses set ``d``, ``deterministic`` and ``lattice_period`` (gcd of
    times at which S_n = 0 has positive probability; 1 means aperiodic) and
    implement ``sample_batch``, ``step_batch`` and ``state_ids``.  Batch
    objects are opaque to this layer.  Default trace implementations loop over
    ``step_batch``; subclasses may override them with fast paths.
    """

    d: int = 2
    deterministic: bool = False
    lattice_period: int = 1

    def sample_batch(self, n: int, gen: np.random.Generator):
        raise NotImplementedError

    def step_batch(self, batch, gen: np.random.Generator):
        """Advance every trajectory one step; returns (new_batch, jumps[N,d])."""
        raise NotImplementedError

    def state_ids(self, batch) -> np.ndarray:
        """Integer symbol component of the current states (scatterer/state)."""
        raise NotImplementedError

    def singleton_batch(self, x):
        """Wrap a single base point as a size-1 batch."""
        raise NotImplementedError

    def point_of(self, batch, i: int = 0):
        """Extract one base point from a batch."""
        raise NotImplementedError

    def batch_size(self, batch) -> int:
        return self.state_ids(batch).shape[0]

    def excluded_mask(self, batch) -> np.ndarray:
        """Trajectories to drop from symbolic statistics (grazing etc.)."""
        return np.zeros(self.batch_size(batch), dtype=bool)

    # -- generic trace fallbacks ------------------------------------------

    def trace_checkpoints(self, batch, checkpoints, gen):
        """States and sums S_n at the given sorted checkpoints.

        Returns (batches: list per checkpoint, sums int64[N, n_cp, d]).
        """
        cps = list(checkpoints)
        n = self.batch_size(batch)
        sums = np.zeros((n, len(cps), self.d), dtype=np.int64)
        batches = [None] * len(cps)
        s = np.zeros((n, self.d), dtype=np.int64)
        ptr = 0
        while ptr < len(cps) and cps[ptr] == 0:
            batches[ptr] = batch
            sums[:, ptr, :] = s
            ptr += 1
        for j in range(1, (cps[-1] if cps else 0) + 1):
            batch, jumps = self.step_batch(batch, gen)
            s = s + jumps
            while ptr < len(cps) and cps[ptr] == j:
                batches[ptr] = batch
                sums[:, ptr, :] = s
                ptr += 1
        return batches, sums

    def trace_jumps(self, batch, n_steps: int, gen):
        """All jumps along n_steps; returns (final batch, jumps int64[N,n,d])."""
        n = self.batch_size(batch)
        out = np.zeros((n, n_steps, self.d), dtype=np.int64)
        for j in range(n_steps):
            batch, jumps = self.step_batch(batch, gen)
            out[:, j, :] = jumps
        return batch, out

    def first_return(self, batch, cap: int, gen):
        """First n in [1, cap] with S_n = 0 per orbit; cap+1 when censored."""
        n = self.batch_size(batch)
        times = np.full(n, cap + 1, dtype=np.int64)
        s = np.zeros((n, self.d), dtype=np.int64)
        open_mask = np.ones(n, dtype=bool)
        for j in range(1, cap + 1):
            if not open_mask.any():
                break
            batch, jumps = self.step_batch(batch, gen)
            s += jumps
            returned = open_mask & (s == 0).all(axis=1)
            times[returned] = j
            open_mask &= ~returned
        return times

    def window_symbols(self, batch, k_back: int, k_fwd: int, gen):
        """Itinerary symbols (id, jump) for steps -k_back..k_fwd per trajectory.

        The generic implementation is forward-only; systems with an invertible
        base override it.  Returns int32[N, k_back+k_fwd+1, 1+d].
        """
        if k_back > 0:
            raise NotImplementedError(
                f"{type(self).__name__} does not support backward itineraries"
            )
        n = self.batch_size(batch)
        w = k_fwd + 1
        sym = np.empty((n, w, 1 + self.d), dtype=np.int32)
        for j in range(w):
            sym[:, j, 0] = self.state_ids(batch)
            batch, jumps = self.step_batch(batch, gen)
            sym[:, j, 1:] = jumps
        return sym

    def correlation_trace(self, batch, n_grid, k_u: int, k_v: int, gen):
        """Single-pass data for correlation estimators.

        Collects the step-0 window of half-width k_u, the window of half-width
        k_v around every n in n_grid, and S_n, all from one jump sequence (so
        stochastic systems stay consistent).  Returns a CorrelationTrace.
        """
        if k_u > 0:
            raise NotImplementedError(
                "centered step-0 windows need an invertible base; "
                "override correlation_trace"
            )
        n_grid = sorted(n_grid)
        n_set = set(n_grid)
        if n_grid and n_grid[0] - k_v < 0:
            raise ValueError("n must be >= window half-width")
        n = self.batch_size(batch)
        n_max = (n_grid[-1] if n_grid else 0) + k_v
        w0 = 2 * k_u + 1
        wv = 2 * k_v + 1
        sym0 = np.empty((n, w0, 1 + self.d), dtype=np.int32)
        sym_n = {m: np.empty((n, wv, 1 + self.d), dtype=np.int32) for m in n_grid}
        sums = {}
        ring = np.empty((n, wv, 1 + self.d), dtype=np.int32)
        targets = {m + k_v: m for m in n_grid}
        s = np.zeros((n, self.d), dtype=np.int64)
        for j in range(n_max + 1):
            if j in n_set:
                sums[j] = s.copy()
            ids = self.state_ids(batch)
            batch, jumps = self.step_batch(batch, gen)
            slot = j % wv
            ring[:, slot, 0] = ids
            ring[:, slot, 1:] = jumps
            if j <= k_u:
                sym0[:, k_u + j, 0] = ids
                sym0[:, k_u + j, 1:] = jumps
            s = s + jumps
            if j in targets:
                m = targets[j]
                lo = m - k_v
                order = [(lo + t) % wv for t in range(wv)]
                sym_n[m][:, :, :] = ring[:, order, :]
        excl = self.excluded_mask(batch)
        return CorrelationTrace(sym0=sym0, sym_n=sym_n, sums=sums, excluded=excl)


@dataclass
class CorrelationTrace:
    """Windows and sums produced by correlation_trace."""

    sym0: np.ndarray
    sym_n: dict[int, np.ndarray]
    sums: dict[int, np.ndarray]
    excluded: np.ndarray


@dataclass
class TrajectoryRecord:
    """One orbit: base points, exact integer cocycle sums, grazing count."""

    points: list[Any]
    sums: np.ndarray  # int64[n+1, d], sums[0] = 0
    grazing_count: int = 0

    def __post_init__(self):
        assert (self.sums[0] == 0).all()

    @property
    def n(self) -> int:
        return self.sums.shape[0] - 1


def birkhoff_sum(system: ExtensionSystem, x, n: int, gen=None) -> TrajectoryRecord:
    """Orbit record with S_0 = 0, ..., S_n for a single starting point."""
    if n < 0:
        raise ValueError("n must be >= 0")
    gen = gen or np.random.default_rng(0)
    batch = system.singleton_batch(x)
    points = [x]
    sums = np.zeros((n + 1, system.d), dtype=np.int64)
    grazing = 0
    for j in range(1, n + 1):
        batch, jumps = system.step_batch(batch, gen)
        points.append(system.point_of(batch))
        sums[j] = sums[j - 1] + jumps[0]
        grazing += int(system.excluded_mask(batch)[0])
    return TrajectoryRecord(points=points, sums=sums, grazing_count=grazing)


def first_return_time(system: ExtensionSystem, x, cap: int, gen=None) -> int | None:
    """min{1 <= n <= cap : S_n(x) = 0}, or None when censored at cap."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    gen = gen or np.random.default_rng(0)
    batch = system.singleton_batch(x)
    times = system.first_return(batch, cap, gen)
    t = int(times[0])
    return t if t <= cap else None


def renewal_pathwise_check(record: TrajectoryRecord) -> bool:
    """Exact last-visit renewal identity along one orbit.

    Over j = 0..n the product 1_{phi > n-j}(f^j x) * 1_{S_j = 0} picks exactly
    the last j with S_j = 0 (phi > n-j along the shifted orbit means S_m != S_j
    for all m in (j, n]).  The sum of indicators must equal 1.
    """
    sums = record.sums
    n = record.n
    total = 0
    for j in range(n + 1):
        if (sums[j] != 0).any():
            continue
        later = sums[j + 1 : n + 1]
        if later.size == 0 or not (later == sums[j]).all(axis=1).any():
            total += 1
    return total == 1


def renewal_check_sums(sums: np.ndarray) -> bool:
    """Same identity straight from an int sums array [(n+1), d]."""
    rec = TrajectoryRecord(points=[], sums=np.asarray(sums, dtype=np.int64))
    return renewal_pathwise_check(rec)


def renewal_check_batch(sums: np.ndarray) -> np.ndarray:
    """Vectorized pathwise renewal check over a batch of orbits.

    sums has shape [N, n+1, d] with sums[:, 0] = 0.  For each orbit, counts
    the j with S_j = 0 and no later return to zero; the identity demands the
    count be exactly 1.  Returns the boolean per-orbit verdicts.
    """
    z = (np.asarray(sums) == 0).all(axis=2)
    n1 = z.shape[1]
    zeros_from = np.flip(np.cumsum(np.flip(z, axis=1), axis=1), axis=1)
    zeros_after = np.concatenate(
        [zeros_from[:, 1:], np.zeros((z.shape[0], 1), dtype=zeros_from.dtype)], axis=1
    )
    contrib = z & (zeros_after == 0)
    return contrib.sum(axis=1) == 1


def sums_from_jumps(jumps: np.ndarray) -> np.ndarray:
    """Prefix sums with the leading S_0 = 0 plane, [N, n, d] -> [N, n+1, d]."""
    j = np.asarray(jumps, dtype=np.int64)
    out = np.zeros((j.shape[0], j.shape[1] + 1, j.shape[2]), dtype=np.int64)
    np.cumsum(j, axis=1, out=out[:, 1:, :])
    return out
