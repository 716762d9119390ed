"""Pure numpy implementation of the collision-map kernels.

Reference semantics for the compiled backend in ``_core.pyx``: both scan the
same distance-sorted candidate list with identical formulas, so per-step
outputs agree to rounding.  This backend is selected when the extension is
unavailable or ``LORENTZMIX_PURE=1`` is set.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"

# Max distance from (0.5, 0.5) to a boundary point of any disc based in the
# fundamental cell; used in the sorted-scan lower bound t >= ss - REACH - r.
REACH = 1.41422


def _scan(geom, qx, qy, vx, vy):
    """Earliest ray/disc intersection over the sorted candidate list.

    Returns (t, k) per ray with k = -1 when nothing is hit within the horizon.
    """
    n = qx.shape[0]
    best_t = np.full(n, np.inf)
    best_k = np.full(n, -1, dtype=np.int64)
    cutoff = geom.cand_s - (REACH + geom.r_max)
    horizon = geom.horizon
    for k in range(geom.cand_cx.shape[0]):
        lim = np.minimum(best_t, horizon)
        if cutoff[k] > lim.max():
            break
        dx = qx - geom.cand_cx[k]
        dy = qy - geom.cand_cy[k]
        b = vx * dx + vy * dy
        c = dx * dx + dy * dy - geom.cand_r[k] * geom.cand_r[k]
        disc = b * b - c
        hit = (b < 0.0) & (disc > 0.0)
        if not hit.any():
            continue
        t = -b - np.sqrt(np.where(hit, disc, 1.0))
        upd = hit & (t > geom.t_eps) & (t < best_t)
        best_t[upd] = t[upd]
        best_k[upd] = k
    best_k[best_t > horizon] = -1
    return best_t, best_k


def step_batch(geom, scat, theta, phi, num_threads=0):
    """One collision-map application to a batch of phase points.

    Returns (scat', theta', phi', jump_x, jump_y, flight, cos_out); rays with
    no collision within the horizon get flight = -1 and are left unchanged.
    """
    c0 = geom.centers0
    r0 = geom.radii0
    qx = c0[scat, 0] + r0[scat] * np.cos(theta)
    qy = c0[scat, 1] + r0[scat] * np.sin(theta)
    ang = theta + phi
    vx = np.cos(ang)
    vy = np.sin(ang)

    t, k = _scan(geom, qx, qy, vx, vy)
    ok = k >= 0
    ks = np.where(ok, k, 0)

    cx = geom.cand_cx[ks]
    cy = geom.cand_cy[ks]
    r = geom.cand_r[ks]
    px = qx + t * vx
    py = qy + t * vy
    nx = (px - cx) / r
    ny = (py - cy) / r
    # cos phi' = sqrt(disc)/r, recomputed from the accepted candidate
    dx = qx - cx
    dy = qy - cy
    b = vx * dx + vy * dy
    disc = b * b - (dx * dx + dy * dy - r * r)
    cos_out = np.sqrt(np.maximum(disc, 0.0)) / r
    sin_out = nx * vy - ny * vx

    scat2 = np.where(ok, geom.cand_disc[ks], scat).astype(np.int32)
    theta2 = np.where(ok, np.arctan2(ny, nx), theta)
    phi2 = np.where(ok, np.arctan2(sin_out, cos_out), phi)
    jx = np.where(ok, geom.cand_mx[ks], 0).astype(np.int64)
    jy = np.where(ok, geom.cand_my[ks], 0).astype(np.int64)
    flight = np.where(ok, t, -1.0)
    cos_out = np.where(ok, cos_out, 1.0)
    return scat2, theta2, phi2, jx, jy, flight, cos_out


def trace_batch(geom, scat, theta, phi, checkpoints, num_threads=0):
    """Iterate the collision map, recording state and cocycle sum at checkpoints.

    checkpoints must be sorted nonnegative ints.  Returns per-checkpoint state
    arrays, lattice sums, the min of cos(phi) seen along each orbit, and an ok
    mask (0 where the horizon was violated; such orbits stop evolving).
    """
    cps = np.asarray(checkpoints, dtype=np.int64)
    n_cp = cps.shape[0]
    n = scat.shape[0]
    scat_cp = np.empty((n, n_cp), dtype=np.int32)
    theta_cp = np.empty((n, n_cp))
    phi_cp = np.empty((n, n_cp))
    sx_cp = np.empty((n, n_cp), dtype=np.int64)
    sy_cp = np.empty((n, n_cp), dtype=np.int64)

    s = scat.astype(np.int32).copy()
    th = theta.copy()
    ph = phi.copy()
    sx = np.zeros(n, dtype=np.int64)
    sy = np.zeros(n, dtype=np.int64)
    min_cos = np.cos(ph)
    alive = np.ones(n, dtype=bool)

    ptr = 0
    while ptr < n_cp and cps[ptr] == 0:
        scat_cp[:, ptr] = s
        theta_cp[:, ptr] = th
        phi_cp[:, ptr] = ph
        sx_cp[:, ptr] = sx
        sy_cp[:, ptr] = sy
        ptr += 1

    n_max = int(cps[-1]) if n_cp else 0
    for j in range(1, n_max + 1):
        s2, th2, ph2, jx, jy, flight, cos_out = step_batch(geom, s, th, ph)
        good = alive & (flight >= 0.0)
        alive &= flight >= 0.0
        s = np.where(good, s2, s)
        th = np.where(good, th2, th)
        ph = np.where(good, ph2, ph)
        sx += np.where(good, jx, 0)
        sy += np.where(good, jy, 0)
        min_cos = np.where(good, np.minimum(min_cos, cos_out), min_cos)
        while ptr < n_cp and cps[ptr] == j:
            scat_cp[:, ptr] = s
            theta_cp[:, ptr] = th
            phi_cp[:, ptr] = ph
            sx_cp[:, ptr] = sx
            sy_cp[:, ptr] = sy
            ptr += 1
    return scat_cp, theta_cp, phi_cp, sx_cp, sy_cp, min_cos, alive.astype(np.uint8)


def trace_jumps(geom, scat, theta, phi, n_steps, num_threads=0):
    """Iterate the map recording every lattice jump (int16 components)."""
    n = scat.shape[0]
    jx = np.zeros((n, n_steps), dtype=np.int16)
    jy = np.zeros((n, n_steps), dtype=np.int16)
    s = scat.astype(np.int32).copy()
    th = theta.copy()
    ph = phi.copy()
    min_cos = np.cos(ph)
    alive = np.ones(n, dtype=bool)
    for j in range(n_steps):
        s2, th2, ph2, dx, dy, flight, cos_out = step_batch(geom, s, th, ph)
        good = alive & (flight >= 0.0)
        alive &= flight >= 0.0
        s = np.where(good, s2, s)
        th = np.where(good, th2, th)
        ph = np.where(good, ph2, ph)
        jx[:, j] = np.where(good, dx, 0).astype(np.int16)
        jy[:, j] = np.where(good, dy, 0).astype(np.int16)
        min_cos = np.where(good, np.minimum(min_cos, cos_out), min_cos)
    return s, th, ph, jx, jy, min_cos, alive.astype(np.uint8)


def first_return_batch(geom, scat, theta, phi, cap, num_threads=0):
    """First n in [1, cap] with S_n = 0 per orbit; cap+1 marks censored."""
    n = scat.shape[0]
    times = np.full(n, cap + 1, dtype=np.int64)
    s = scat.astype(np.int32).copy()
    th = theta.copy()
    ph = phi.copy()
    sx = np.zeros(n, dtype=np.int64)
    sy = np.zeros(n, dtype=np.int64)
    min_cos = np.cos(ph)
    alive = np.ones(n, dtype=bool)
    active = np.arange(n)
    for j in range(1, cap + 1):
        if active.shape[0] == 0:
            break
        s2, th2, ph2, jx, jy, flight, cos_out = step_batch(
            geom, s[active], th[active], ph[active]
        )
        bad = flight < 0.0
        alive[active[bad]] = False
        good = ~bad
        idx = active[good]
        s[idx] = s2[good]
        th[idx] = th2[good]
        ph[idx] = ph2[good]
        sx[idx] += jx[good]
        sy[idx] += jy[good]
        min_cos[idx] = np.minimum(min_cos[idx], cos_out[good])
        returned = (sx[idx] == 0) & (sy[idx] == 0)
        times[idx[returned]] = j
        active = idx[~returned]
    return times, min_cos, alive.astype(np.uint8)
