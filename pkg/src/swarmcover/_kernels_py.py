"""Pure numpy implementations of the per-step swarm kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics. ``swarmcover.kernels`` picks one at import time.

Edge ``k`` of a polygon runs from vertex ``k - 1`` to vertex ``k`` (edge 0 is
the closing edge). Projection ties go to the lowest edge index.
"""
import numpy as np

BOUNDARY_TOL = 1e-9


def _crossings(verts, pts):
    # even-odd rule, vectorised over points x edges
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    a = np.roll(verts, 1, axis=0)
    b = verts
    ay, by = a[:, 1][None, :], b[:, 1][None, :]
    ax, bx = a[:, 0][None, :], b[:, 0][None, :]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = (bx - ax) * (y - ay) / (by - ay) + ax
    hits = straddle & (x < xcross)
    return (hits.sum(axis=1) % 2) == 1


def project_points(verts, pts):
    """Closest boundary point for each query point.

    Returns ``(proj, dist, inside, edge)``: projections ``(m, 2)``, distances
    ``(m,)``, indicator ``(m,)`` with -1 inside / +1 outside, and the index of
    the projecting edge.
    """
    verts = np.asarray(verts, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    a = np.roll(verts, 1, axis=0)
    e = verts - a
    ee = np.einsum("ij,ij->i", e, e)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.einsum("mkj,kj->mk", rel, e) / ee[None, :]
    t = np.clip(t, 0.0, 1.0)
    cand = a[None, :, :] + t[:, :, None] * e[None, :, :]
    diff = pts[:, None, :] - cand
    d2 = np.einsum("mkj,mkj->mk", diff, diff)
    edge = np.argmin(d2, axis=1)
    rows = np.arange(pts.shape[0])
    proj = cand[rows, edge]
    off = pts - proj
    dist = np.sqrt(off[:, 0] * off[:, 0] + off[:, 1] * off[:, 1])
    inside = (dist <= BOUNDARY_TOL) | _crossings(verts, pts)
    indicator = np.where(inside, -1.0, 1.0)
    return proj, dist, indicator, edge


def boundary_directions(verts, pts, proj, dist, edge):
    """Unit offset ``(p - proj) / dist``; on the boundary, the inward edge normal."""
    verts = np.asarray(verts, dtype=np.float64)
    off = pts - proj
    out = np.empty_like(off)
    nz = dist > 0.0
    out[nz] = off[nz] / dist[nz, None]
    if not nz.all():
        a = np.roll(verts, 1, axis=0)
        e = verts - a
        for m in np.flatnonzero(~nz):
            ex, ey = e[edge[m]]
            norm = np.hypot(ex, ey)
            # CCW polygon: inward normal is the left normal of the edge
            out[m, 0] = -ey / norm
            out[m, 1] = ex / norm
    return out


def coincident_direction(i, j):
    """Deterministic unit vector for a coincident pair, antisymmetric in (i, j)."""
    lo, hi = (i, j) if i < j else (j, i)
    angle = 2.0 * np.pi * (((lo * 92821 + hi * 68917) % 3600) / 3600.0)
    sign = 1.0 if i < j else -1.0
    return sign * np.cos(angle), sign * np.sin(angle)


def _pair_terms(p, r_d):
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    n = p.shape[0]
    np.fill_diagonal(dist, np.inf)
    return diff, dist, n


def individual_potentials(verts, p, r_d):
    """Per-agent potential: twice the domain term plus the pairwise terms."""
    p = np.asarray(p, dtype=np.float64)
    proj, dist, ind, _ = project_points(verts, p)
    sd = ind * dist
    act = sd + 0.5 * r_d
    uh = np.where(sd <= -0.5 * r_d, 0.0, 0.5 * act * act)
    _, pd, _ = _pair_terms(p, r_d)
    ui = np.where(pd < r_d, 0.5 * (pd - r_d) ** 2, 0.0)
    return 2.0 * uh + ui.sum(axis=1)


def classical_accels(verts, p, v, r_d, c, a_max, clamp=True):
    """Damped negative-gradient controller, one row per agent."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    proj, dist, ind, edge = project_points(verts, p)
    sd = ind * dist
    dhat = boundary_directions(verts, p, proj, dist, edge)
    coef = np.where(sd <= -0.5 * r_d, 0.0, sd + 0.5 * r_d)
    grad = (coef * ind)[:, None] * dhat

    diff, pd, n = _pair_terms(p, r_d)
    near = pd < r_d
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = diff / pd[:, :, None]
    zero = pd == 0.0
    if zero.any():
        for i, j in zip(*np.nonzero(zero)):
            unit[i, j] = coincident_direction(i, j)
    mag = np.where(near, pd - r_d, 0.0)
    unit = np.where(near[:, :, None], unit, 0.0)
    grad = grad + np.einsum("ij,ijk->ik", mag, unit)

    acc = -grad - c * v
    if clamp:
        norms = np.sqrt(acc[:, 0] ** 2 + acc[:, 1] ** 2)
        scale = np.where(norms > a_max, a_max / np.where(norms > 0, norms, 1.0), 1.0)
        acc = acc * scale[:, None]
    return acc


def lstm_step_forward(z, x, W_x, b, c_prev, gates, c, tc, h):
    """One LSTM step written into ``gates``, ``c``, ``tc = tanh(c)`` and ``h``.

    ``z`` holds ``h_prev @ W_h`` on entry; the input term and bias are added here.
    Gate order is input, forget, output, candidate.
    """
    H = c.shape[1]
    z = z + x @ W_x + b
    gates[:, :3 * H] = 0.5 * (1.0 + np.tanh(0.5 * z[:, :3 * H]))
    gates[:, 3 * H:] = np.tanh(z[:, 3 * H:])
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    c[...] = f * c_prev + i * g
    tc[...] = np.tanh(c)
    h[...] = o * tc


def lstm_step_backward(dh, dc, gates, c_prev, tc, dz):
    """Pre-activation gradients of one step into ``dz``.

    ``dc`` enters as the gradient flowing into this step's cell state from later
    steps and leaves as the gradient with respect to ``c_prev``.
    """
    H = dh.shape[1]
    i, f, o, g = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    dc += dh * o * (1.0 - tc * tc)
    dz[:, :H] = dc * g * i * (1.0 - i)
    dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
    dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
    dz[:, 3 * H:] = dc * i * (1.0 - g * g)
    dc *= f
