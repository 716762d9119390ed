# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled collision-map kernels.

Mirrors ``_pure.py``: same candidate scan order, same formulas, same outputs.
Trajectories are independent and write only to their own output slots, so
results are identical for any thread count.
"""

import os

import numpy as np

from cython.parallel import prange
from libc.math cimport atan2, cos, sin, sqrt

BACKEND = "cython"

DEF REACH = 1.41422


cdef struct StepOut:
    int ok
    int scat
    double theta
    double phi
    long jx
    long jy
    double flight
    double cos_out


cdef struct Geom:
    const double* cand_cx
    const double* cand_cy
    const double* cand_r
    const double* cand_s
    const int* cand_disc
    const int* cand_mx
    const int* cand_my
    const double* centers0
    const double* radii0
    Py_ssize_t n_cand
    double r_max
    double horizon
    double t_eps


cdef class _GeomView:
    """Keeps the candidate arrays alive while a Geom struct points at them."""
    cdef object arrays
    cdef Geom g

    def __init__(self, geom):
        self.arrays = (
            np.ascontiguousarray(geom.cand_cx, dtype=np.float64),
            np.ascontiguousarray(geom.cand_cy, dtype=np.float64),
            np.ascontiguousarray(geom.cand_r, dtype=np.float64),
            np.ascontiguousarray(geom.cand_s, dtype=np.float64),
            np.ascontiguousarray(geom.cand_disc, dtype=np.int32),
            np.ascontiguousarray(geom.cand_mx, dtype=np.int32),
            np.ascontiguousarray(geom.cand_my, dtype=np.int32),
            np.ascontiguousarray(geom.centers0, dtype=np.float64),
            np.ascontiguousarray(geom.radii0, dtype=np.float64),
        )
        cdef const double[::1] cx = self.arrays[0]
        cdef const double[::1] cy = self.arrays[1]
        cdef const double[::1] cr = self.arrays[2]
        cdef const double[::1] cs = self.arrays[3]
        cdef const int[::1] cd = self.arrays[4]
        cdef const int[::1] cmx = self.arrays[5]
        cdef const int[::1] cmy = self.arrays[6]
        cdef const double[:, ::1] c0 = self.arrays[7]
        cdef const double[::1] r0 = self.arrays[8]
        self.g.cand_cx = &cx[0]
        self.g.cand_cy = &cy[0]
        self.g.cand_r = &cr[0]
        self.g.cand_s = &cs[0]
        self.g.cand_disc = &cd[0]
        self.g.cand_mx = &cmx[0]
        self.g.cand_my = &cmy[0]
        self.g.centers0 = &c0[0, 0]
        self.g.radii0 = &r0[0]
        self.g.n_cand = cx.shape[0]
        self.g.r_max = geom.r_max
        self.g.horizon = geom.horizon
        self.g.t_eps = geom.t_eps


cdef inline StepOut _step_one(const Geom* g, int scat, double theta, double phi) noexcept nogil:
    cdef StepOut out
    cdef double qx = g.centers0[2 * scat] + g.radii0[scat] * cos(theta)
    cdef double qy = g.centers0[2 * scat + 1] + g.radii0[scat] * sin(theta)
    cdef double ang = theta + phi
    cdef double vx = cos(ang)
    cdef double vy = sin(ang)
    cdef double best_t = 1e300
    cdef Py_ssize_t best_k = -1
    cdef Py_ssize_t k
    cdef double lim, dx, dy, b, c, disc, t

    for k in range(g.n_cand):
        lim = best_t if best_t < g.horizon else g.horizon
        if g.cand_s[k] - (REACH + g.r_max) > lim:
            break
        dx = qx - g.cand_cx[k]
        dy = qy - g.cand_cy[k]
        b = vx * dx + vy * dy
        if b >= 0.0:
            continue
        c = dx * dx + dy * dy - g.cand_r[k] * g.cand_r[k]
        disc = b * b - c
        if disc <= 0.0:
            continue
        t = -b - sqrt(disc)
        if t > g.t_eps and t < best_t:
            best_t = t
            best_k = k
    if best_k < 0 or best_t > g.horizon:
        out.ok = 0
        out.scat = scat
        out.theta = theta
        out.phi = phi
        out.jx = 0
        out.jy = 0
        out.flight = -1.0
        out.cos_out = 1.0
        return out

    cdef double cx = g.cand_cx[best_k]
    cdef double cy = g.cand_cy[best_k]
    cdef double r = g.cand_r[best_k]
    cdef double px = qx + best_t * vx
    cdef double py = qy + best_t * vy
    cdef double nx = (px - cx) / r
    cdef double ny = (py - cy) / r
    dx = qx - cx
    dy = qy - cy
    b = vx * dx + vy * dy
    disc = b * b - (dx * dx + dy * dy - r * r)
    if disc < 0.0:
        disc = 0.0
    cdef double cos_out = sqrt(disc) / r
    cdef double sin_out = nx * vy - ny * vx

    out.ok = 1
    out.scat = g.cand_disc[best_k]
    out.theta = atan2(ny, nx)
    out.phi = atan2(sin_out, cos_out)
    out.jx = g.cand_mx[best_k]
    out.jy = g.cand_my[best_k]
    out.flight = best_t
    out.cos_out = cos_out
    return out


cdef int _resolve_threads(num_threads):
    cdef int nt = int(num_threads) if num_threads else 0
    if nt <= 0:
        nt = os.cpu_count() or 1
    return nt


def step_batch(geom, scat, theta, phi, num_threads=0):
    cdef _GeomView gv = _GeomView(geom)
    cdef const Geom* g = &gv.g

    cdef const int[::1] sc = np.ascontiguousarray(scat, dtype=np.int32)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = sc.shape[0]

    scat2 = np.empty(n, dtype=np.int32)
    theta2 = np.empty(n)
    phi2 = np.empty(n)
    jx = np.empty(n, dtype=np.int64)
    jy = np.empty(n, dtype=np.int64)
    flight = np.empty(n)
    cos_out = np.empty(n)
    cdef int[::1] scat2_v = scat2
    cdef double[::1] theta2_v = theta2
    cdef double[::1] phi2_v = phi2
    cdef long[::1] jx_v = jx
    cdef long[::1] jy_v = jy
    cdef double[::1] flight_v = flight
    cdef double[::1] cos_v = cos_out

    cdef Py_ssize_t i
    cdef StepOut o
    cdef int nt = _resolve_threads(num_threads)
    for i in prange(n, nogil=True, schedule="static", num_threads=nt):
        o = _step_one(g, sc[i], th[i], ph[i])
        scat2_v[i] = o.scat
        theta2_v[i] = o.theta
        phi2_v[i] = o.phi
        jx_v[i] = o.jx
        jy_v[i] = o.jy
        flight_v[i] = o.flight
        cos_v[i] = o.cos_out
    return scat2, theta2, phi2, jx, jy, flight, cos_out


def trace_batch(geom, scat, theta, phi, checkpoints, num_threads=0):
    cdef _GeomView gv = _GeomView(geom)
    cdef const Geom* g = &gv.g

    cdef const int[::1] sc = np.ascontiguousarray(scat, dtype=np.int32)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const long[::1] cps = np.ascontiguousarray(checkpoints, dtype=np.int64)
    cdef Py_ssize_t n = sc.shape[0]
    cdef Py_ssize_t n_cp = cps.shape[0]
    cdef long n_max = cps[n_cp - 1] if n_cp > 0 else 0

    scat_cp = np.empty((n, n_cp), dtype=np.int32)
    theta_cp = np.empty((n, n_cp))
    phi_cp = np.empty((n, n_cp))
    sx_cp = np.empty((n, n_cp), dtype=np.int64)
    sy_cp = np.empty((n, n_cp), dtype=np.int64)
    min_cos = np.empty(n)
    ok = np.empty(n, dtype=np.uint8)
    cdef int[:, ::1] scat_cp_v = scat_cp
    cdef double[:, ::1] theta_cp_v = theta_cp
    cdef double[:, ::1] phi_cp_v = phi_cp
    cdef long[:, ::1] sx_cp_v = sx_cp
    cdef long[:, ::1] sy_cp_v = sy_cp
    cdef double[::1] min_cos_v = min_cos
    cdef unsigned char[::1] ok_v = ok

    cdef Py_ssize_t i, ptr
    cdef long j, sx, sy
    cdef int s
    cdef double t0, p0, mc
    cdef StepOut o
    cdef bint alive
    cdef int nt = _resolve_threads(num_threads)
    for i in prange(n, nogil=True, schedule="static", num_threads=nt):
        s = sc[i]
        t0 = th[i]
        p0 = ph[i]
        sx = 0
        sy = 0
        mc = cos(p0)
        alive = True
        ptr = 0
        while ptr < n_cp and cps[ptr] == 0:
            scat_cp_v[i, ptr] = s
            theta_cp_v[i, ptr] = t0
            phi_cp_v[i, ptr] = p0
            sx_cp_v[i, ptr] = sx
            sy_cp_v[i, ptr] = sy
            ptr = ptr + 1
        for j in range(1, n_max + 1):
            if alive:
                o = _step_one(g, s, t0, p0)
                if o.ok:
                    s = o.scat
                    t0 = o.theta
                    p0 = o.phi
                    sx = sx + o.jx
                    sy = sy + o.jy
                    if o.cos_out < mc:
                        mc = o.cos_out
                else:
                    alive = False
            while ptr < n_cp and cps[ptr] == j:
                scat_cp_v[i, ptr] = s
                theta_cp_v[i, ptr] = t0
                phi_cp_v[i, ptr] = p0
                sx_cp_v[i, ptr] = sx
                sy_cp_v[i, ptr] = sy
                ptr = ptr + 1
        min_cos_v[i] = mc
        ok_v[i] = 1 if alive else 0
    return scat_cp, theta_cp, phi_cp, sx_cp, sy_cp, min_cos, ok


def trace_jumps(geom, scat, theta, phi, n_steps, num_threads=0):
    cdef _GeomView gv = _GeomView(geom)
    cdef const Geom* g = &gv.g

    cdef const int[::1] sc = np.ascontiguousarray(scat, dtype=np.int32)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = sc.shape[0]
    cdef long nst = n_steps

    scat2 = np.empty(n, dtype=np.int32)
    theta2 = np.empty(n)
    phi2 = np.empty(n)
    jx = np.zeros((n, n_steps), dtype=np.int16)
    jy = np.zeros((n, n_steps), dtype=np.int16)
    min_cos = np.empty(n)
    ok = np.empty(n, dtype=np.uint8)
    cdef int[::1] scat2_v = scat2
    cdef double[::1] theta2_v = theta2
    cdef double[::1] phi2_v = phi2
    cdef short[:, ::1] jx_v = jx
    cdef short[:, ::1] jy_v = jy
    cdef double[::1] min_cos_v = min_cos
    cdef unsigned char[::1] ok_v = ok

    cdef Py_ssize_t i
    cdef long j
    cdef int s
    cdef double t0, p0, mc
    cdef StepOut o
    cdef bint alive
    cdef int nt = _resolve_threads(num_threads)
    for i in prange(n, nogil=True, schedule="static", num_threads=nt):
        s = sc[i]
        t0 = th[i]
        p0 = ph[i]
        mc = cos(p0)
        alive = True
        for j in range(nst):
            if not alive:
                break
            o = _step_one(g, s, t0, p0)
            if o.ok:
                s = o.scat
                t0 = o.theta
                p0 = o.phi
                jx_v[i, j] = <short> o.jx
                jy_v[i, j] = <short> o.jy
                if o.cos_out < mc:
                    mc = o.cos_out
            else:
                alive = False
        scat2_v[i] = s
        theta2_v[i] = t0
        phi2_v[i] = p0
        min_cos_v[i] = mc
        ok_v[i] = 1 if alive else 0
    return scat2, theta2, phi2, jx, jy, min_cos, ok


def first_return_batch(geom, scat, theta, phi, cap, num_threads=0):
    cdef _GeomView gv = _GeomView(geom)
    cdef const Geom* g = &gv.g

    cdef const int[::1] sc = np.ascontiguousarray(scat, dtype=np.int32)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = sc.shape[0]
    cdef long capl = cap

    times = np.empty(n, dtype=np.int64)
    min_cos = np.empty(n)
    ok = np.empty(n, dtype=np.uint8)
    cdef long[::1] times_v = times
    cdef double[::1] min_cos_v = min_cos
    cdef unsigned char[::1] ok_v = ok

    cdef Py_ssize_t i
    cdef long j, sx, sy, rt
    cdef int s
    cdef double t0, p0, mc
    cdef StepOut o
    cdef bint alive
    cdef int nt = _resolve_threads(num_threads)
    for i in prange(n, nogil=True, schedule="static", num_threads=nt):
        s = sc[i]
        t0 = th[i]
        p0 = ph[i]
        sx = 0
        sy = 0
        mc = cos(p0)
        alive = True
        rt = capl + 1
        for j in range(1, capl + 1):
            o = _step_one(g, s, t0, p0)
            if o.ok:
                s = o.scat
                t0 = o.theta
                p0 = o.phi
                sx = sx + o.jx
                sy = sy + o.jy
                if o.cos_out < mc:
                    mc = o.cos_out
                if sx == 0 and sy == 0:
                    rt = j
                    break
            else:
                alive = False
                break
        times_v[i] = rt
        min_cos_v[i] = mc
        ok_v[i] = 1 if alive else 0
    return times, min_cos, ok
