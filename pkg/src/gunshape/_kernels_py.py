"""Pure numpy implementations of the numerical kernels.

These mirror the compiled routines in ``_kernels.pyx`` one-to-one and are
used whenever the extension is unavailable (or ``GUNSHAPE_PURE_PYTHON`` is
set). Every function here is vectorized over evaluation points or particles.
"""
import numpy as np

C_LIGHT = 299792458.0

# Particle status codes shared with the compiled tracker.
PENDING, RUNNING, EXITED, LOST = 0, 1, 2, 3


def find_spans(knots, p, xs, left=False):
    knots = np.asarray(knots, dtype=float)
    n = knots.size - p - 1
    side = "left" if left else "right"
    spans = np.searchsorted(knots, xs, side=side) - 1
    return np.clip(spans, p, n - 1).astype(np.int64)


def basis_ders(knots, p, xs, nder, left=False):
    """Nonzero B-spline basis values and derivatives (Piegl & Tiller A2.3).

    Returns ``spans`` of shape (n,) and ``ders`` of shape (n, nder+1, p+1),
    where ``ders[k, r, j]`` is the r-th derivative of basis ``spans[k]-p+j``.
    """
    knots = np.asarray(knots, dtype=float)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    spans = find_spans(knots, p, xs, left)
    npt = xs.size
    ndu = np.empty((npt, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    lft = np.empty((npt, p + 1))
    rgt = np.empty((npt, p + 1))
    for j in range(1, p + 1):
        lft[:, j] = xs - knots[spans + 1 - j]
        rgt[:, j] = knots[spans + j] - xs
        saved = np.zeros(npt)
        for r in range(j):
            ndu[:, j, r] = rgt[:, r + 1] + lft[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + rgt[:, r + 1] * temp
            saved = lft[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npt, nder + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    nd = min(nder, p)
    a = np.zeros((npt, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(npt)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nd + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return spans, ders


def element_matrices(grads, weights):
    """Local stiffness blocks ``sum_q w_q grad N_i . grad N_j``.

    grads: (nel, nq, nloc, 2); weights: (nel, nq). Returns (nel, nloc, nloc).
    """
    gw = grads * weights[:, :, None, None]
    return np.einsum("eqid,eqjd->eij", gw, grads)


def _keys_weights(t):
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=-1,
    )


def interp_field(ez_pad, er_pad, valid, z0, dz, dr, zs, rs):
    """Cubic-convolution interpolation on ghost-padded grids.

    ``ez_pad``/``er_pad`` have one ghost layer on every side. Returns
    (Ez, Er, ok) where ``ok`` is False outside the grid or in masked cells.
    """
    nz, nr = valid.shape
    zs = np.asarray(zs, dtype=float)
    rs = np.asarray(rs, dtype=float)
    fz = (zs - z0) / dz
    fr = rs / dr
    tol = 1e-9
    ok = (fz >= -tol) & (fz <= nz - 1 + tol) & (fr >= -tol) & (fr <= nr - 1 + tol)
    iz = np.clip(np.floor(fz), 0, nz - 2).astype(np.int64)
    ir = np.clip(np.floor(fr), 0, nr - 2).astype(np.int64)
    tz = np.clip(fz - iz, 0.0, 1.0)
    tr = np.clip(fr - ir, 0.0, 1.0)
    ok &= valid[iz, ir] & valid[iz + 1, ir] & valid[iz, ir + 1] & valid[iz + 1, ir + 1]
    wz = _keys_weights(tz)
    wr = _keys_weights(tr)
    ez = np.zeros_like(tz)
    er = np.zeros_like(tz)
    for a in range(4):
        for b in range(4):
            w = wz[..., a] * wr[..., b]
            ez += w * ez_pad[iz + a, ir + b]
            er += w * er_pad[iz + a, ir + b]
    ez = np.where(ok, ez, 0.0)
    er = np.where(ok, er, 0.0)
    return ez, er, ok


def _rhs(y, ez_pad, er_pad, valid, z0, dz, dr, qm):
    x, yy, z = y[:, 0], y[:, 1], y[:, 2]
    rho = np.hypot(x, yy)
    ez, er, ok = interp_field(ez_pad, er_pad, valid, z0, dz, dr, z, rho)
    safe = np.where(rho > 0.0, rho, 1.0)
    ex = np.where(rho > 0.0, er * x / safe, 0.0)
    ey = np.where(rho > 0.0, er * yy / safe, 0.0)
    p = y[:, 3:6]
    gamma = np.sqrt(1.0 + np.sum(p * p, axis=1))
    out = np.empty_like(y)
    out[:, 0:3] = C_LIGHT * p / gamma[:, None]
    out[:, 3] = qm * ex
    out[:, 4] = qm * ey
    out[:, 5] = qm * ez
    return out, ok


def track_rk4(ez_pad, er_pad, valid, z0, dz, dr, state, t_emit, dt, t_start,
              max_steps, planes, qm):
    """Fixed-step RK4 push of independent particles through a static map.

    Returns ``(snaps, status, nsteps)``; ``snaps`` has shape (nplanes, N, 7)
    holding (x, y, z, px, py, pz, t) at each plane crossing (NaN if never
    reached). ``state`` is updated in place.
    """
    n = state.shape[0]
    nplanes = planes.size
    snaps = np.full((nplanes, n, 7), np.nan)
    status = np.full(n, PENDING, dtype=np.int8)
    nextp = np.zeros(n, dtype=np.int64)
    step = 0
    while step < max_steps:
        live = (status == PENDING) | (status == RUNNING)
        if not live.any():
            break
        tn = t_start + step * dt
        tn1 = tn + dt
        idx = np.nonzero(live & (t_emit < tn1))[0]
        step += 1
        if idx.size == 0:
            continue
        t0 = np.maximum(tn, t_emit[idx])
        h = (tn1 - t0)[:, None]
        y = state[idx]
        k1, ok1 = _rhs(y, ez_pad, er_pad, valid, z0, dz, dr, qm)
        k2, ok2 = _rhs(y + 0.5 * h * k1, ez_pad, er_pad, valid, z0, dz, dr, qm)
        k3, ok3 = _rhs(y + 0.5 * h * k2, ez_pad, er_pad, valid, z0, dz, dr, qm)
        k4, ok4 = _rhs(y + h * k3, ez_pad, er_pad, valid, z0, dz, dr, qm)
        ynew = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ok = ok1 & ok2 & ok3 & ok4
        lost = idx[~ok]
        status[lost] = LOST
        good = ok
        gi = idx[good]
        yo = y[good]
        yn = ynew[good]
        state[gi] = yn
        status[gi] = RUNNING
        tg = t0[good]
        hg = h[good, 0]
        # record every plane crossed during this step
        while True:
            k = nextp[gi]
            has = k < nplanes
            kk = np.where(has, k, 0)
            cross = has & (yn[:, 2] >= planes[kk])
            if not cross.any():
                break
            sel = np.nonzero(cross)[0]
            pid = gi[sel]
            dzs = yn[sel, 2] - yo[sel, 2]
            s = np.where(dzs != 0.0, (planes[kk[sel]] - yo[sel, 2]) / np.where(dzs != 0.0, dzs, 1.0), 1.0)
            snap = yo[sel] + s[:, None] * (yn[sel] - yo[sel])
            snaps[kk[sel], pid, :6] = snap
            snaps[kk[sel], pid, 6] = tg[sel] + s * hg[sel]
            nextp[pid] += 1
        done = gi[nextp[gi] >= nplanes]
        status[done] = EXITED
    return snaps, status, step
