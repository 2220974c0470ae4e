# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled swarm kernels. Same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, M_PI, INFINITY

cnp.import_array()

cdef double BOUNDARY_TOL = 1e-9


cdef inline void _project_one(const double[:, ::1] v, double px, double py,
                              double* qx, double* qy, double* dist,
                              double* ind, Py_ssize_t* edge) noexcept nogil:
    cdef Py_ssize_t k, nv = v.shape[0]
    cdef double ax, ay, bx, by, ex, ey, ee, t, cx, cy, dx, dy, d2
    cdef double best = INFINITY
    cdef int crossings = 0
    cdef double xcross
    for k in range(nv):
        if k == 0:
            ax = v[nv - 1, 0]
            ay = v[nv - 1, 1]
        else:
            ax = v[k - 1, 0]
            ay = v[k - 1, 1]
        bx = v[k, 0]
        by = v[k, 1]
        ex = bx - ax
        ey = by - ay
        ee = ex * ex + ey * ey
        t = ((px - ax) * ex + (py - ay) * ey) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = ax + t * ex
        cy = ay + t * ey
        dx = px - cx
        dy = py - cy
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
            qx[0] = cx
            qy[0] = cy
            edge[0] = k
        if (ay > py) != (by > py):
            xcross = (bx - ax) * (py - ay) / (by - ay) + ax
            if px < xcross:
                crossings += 1
    dx = px - qx[0]
    dy = py - qy[0]
    dist[0] = sqrt(dx * dx + dy * dy)
    if dist[0] <= BOUNDARY_TOL or (crossings % 2) == 1:
        ind[0] = -1.0
    else:
        ind[0] = 1.0


def project_points(verts, pts):
    cdef const double[:, ::1] v = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0], i
    proj = np.empty((m, 2), dtype=np.float64)
    dist = np.empty(m, dtype=np.float64)
    ind = np.empty(m, dtype=np.float64)
    edge = np.empty(m, dtype=np.intp)
    cdef double[:, ::1] pr = proj
    cdef double[::1] ds = dist
    cdef double[::1] nd = ind
    cdef Py_ssize_t[::1] ed = edge
    with nogil:
        for i in range(m):
            _project_one(v, p[i, 0], p[i, 1], &pr[i, 0], &pr[i, 1],
                         &ds[i], &nd[i], &ed[i])
    return proj, dist, ind, edge


cdef inline void _coincident(Py_ssize_t i, Py_ssize_t j, double* ux, double* uy) noexcept nogil:
    cdef Py_ssize_t lo = i, hi = j
    cdef double sign = 1.0, angle
    if i > j:
        lo = j
        hi = i
        sign = -1.0
    angle = 2.0 * M_PI * (((lo * 92821 + hi * 68917) % 3600) / 3600.0)
    ux[0] = sign * cos(angle)
    uy[0] = sign * sin(angle)


def individual_potentials(verts, p_in, double r_d):
    cdef const double[:, ::1] v = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j, e
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double qx, qy, dist, ind, sd, act, uh, dx, dy, d, acc
    with nogil:
        for i in range(n):
            _project_one(v, p[i, 0], p[i, 1], &qx, &qy, &dist, &ind, &e)
            sd = ind * dist
            if sd <= -0.5 * r_d:
                uh = 0.0
            else:
                act = sd + 0.5 * r_d
                uh = 0.5 * act * act
            acc = 0.0
            for j in range(n):
                if j == i:
                    continue
                dx = p[i, 0] - p[j, 0]
                dy = p[i, 1] - p[j, 1]
                d = sqrt(dx * dx + dy * dy)
                if d < r_d:
                    acc += 0.5 * (d - r_d) * (d - r_d)
            o[i] = 2.0 * uh + acc
    return out


def classical_accels(verts, p_in, v_in, double r_d, double c, double a_max, bint clamp=True):
    cdef const double[:, ::1] v = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef const double[:, ::1] vel = np.ascontiguousarray(v_in, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], nv = v.shape[0], i, j, e, ka
    out = np.empty((n, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double qx, qy, dist, ind, sd, coef, hx, hy, gx, gy, dx, dy, d, ux, uy
    cdef double ex, ey, en, ax, ay, norm
    with nogil:
        for i in range(n):
            _project_one(v, p[i, 0], p[i, 1], &qx, &qy, &dist, &ind, &e)
            sd = ind * dist
            if dist > 0.0:
                hx = (p[i, 0] - qx) / dist
                hy = (p[i, 1] - qy) / dist
            else:
                ka = nv - 1 if e == 0 else e - 1
                ex = v[e, 0] - v[ka, 0]
                ey = v[e, 1] - v[ka, 1]
                en = sqrt(ex * ex + ey * ey)
                hx = -ey / en
                hy = ex / en
            if sd <= -0.5 * r_d:
                coef = 0.0
            else:
                coef = sd + 0.5 * r_d
            gx = coef * ind * hx
            gy = coef * ind * hy
            for j in range(n):
                if j == i:
                    continue
                dx = p[i, 0] - p[j, 0]
                dy = p[i, 1] - p[j, 1]
                d = sqrt(dx * dx + dy * dy)
                if d < r_d:
                    if d == 0.0:
                        _coincident(i, j, &ux, &uy)
                    else:
                        ux = dx / d
                        uy = dy / d
                    gx += (d - r_d) * ux
                    gy += (d - r_d) * uy
            ax = -gx - c * vel[i, 0]
            ay = -gy - c * vel[i, 1]
            if clamp:
                norm = sqrt(ax * ax + ay * ay)
                if norm > a_max:
                    ax = ax * (a_max / norm)
                    ay = ay * (a_max / norm)
            o[i, 0] = ax
            o[i, 1] = ay
    return out


def boundary_directions(verts, pts, proj, dist, edge):
    # not hot; shared with the numpy path
    from swarmcover._kernels_py import boundary_directions as _bd
    return _bd(verts, pts, proj, dist, edge)


def coincident_direction(Py_ssize_t i, Py_ssize_t j):
    cdef double ux, uy
    _coincident(i, j, &ux, &uy)
    return ux, uy


def lstm_step_forward(double[:, ::1] z, const double[:, ::1] x, const double[:, ::1] W_x,
                      const double[::1] b, const double[:, ::1] c_prev, double[:, ::1] gates,
                      double[:, ::1] c, double[:, ::1] tc, double[:, ::1] h):
    # transcendentals go through numpy's vectorised tanh; the rest is fused here.
    # sigmoid(s) = (1 + tanh(s / 2)) / 2. ``z`` is overwritten.
    cdef Py_ssize_t B = c.shape[0], H = c.shape[1], n_in = x.shape[1]
    cdef Py_ssize_t r, j, k
    cdef double s, gi, gg
    with nogil:
        for r in range(B):
            for j in range(4 * H):
                s = z[r, j] + b[j]
                for k in range(n_in):
                    s = s + x[r, k] * W_x[k, j]
                z[r, j] = 0.5 * s if j < 3 * H else s
    np.tanh(z, out=np.asarray(gates))
    with nogil:
        for r in range(B):
            for j in range(3 * H):
                gates[r, j] = 0.5 * (1.0 + gates[r, j])
            for j in range(H):
                gi = gates[r, j]
                gg = gates[r, 3 * H + j]
                c[r, j] = gates[r, H + j] * c_prev[r, j] + gi * gg
    np.tanh(c, out=np.asarray(tc))
    with nogil:
        for r in range(B):
            for j in range(H):
                h[r, j] = gates[r, 2 * H + j] * tc[r, j]


def lstm_step_backward(const double[:, ::1] dh, double[:, ::1] dc, const double[:, ::1] gates,
                       const double[:, ::1] c_prev, const double[:, ::1] tc, double[:, ::1] dz):
    cdef Py_ssize_t B = dh.shape[0], H = dh.shape[1]
    cdef Py_ssize_t r, j
    cdef double gi, gf, go, gg, t, d
    with nogil:
        for r in range(B):
            for j in range(H):
                gi = gates[r, j]
                gf = gates[r, H + j]
                go = gates[r, 2 * H + j]
                gg = gates[r, 3 * H + j]
                t = tc[r, j]
                d = dc[r, j] + dh[r, j] * go * (1.0 - t * t)
                dz[r, j] = d * gg * gi * (1.0 - gi)
                dz[r, H + j] = d * c_prev[r, j] * gf * (1.0 - gf)
                dz[r, 2 * H + j] = dh[r, j] * t * go * (1.0 - go)
                dz[r, 3 * H + j] = d * gi * (1.0 - gg * gg)
                dc[r, j] = d * gf
