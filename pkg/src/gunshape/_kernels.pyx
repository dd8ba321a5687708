# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: basis evaluation, element stiffness blocks, field
interpolation and the RK4 particle push. Semantics match _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()

cdef double C_LIGHT = 299792458.0
cdef int PENDING = 0, RUNNING = 1, EXITED = 2, LOST = 3


cdef inline Py_ssize_t _span(const double[:] knots, int p, Py_ssize_t n, double x, bint left) noexcept nogil:
    # binary search; clamped to [p, n-1]
    cdef Py_ssize_t lo = p, hi = n, mid
    if left:
        if x <= knots[p]:
            return p
        if x > knots[n - 1]:
            return n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if x <= knots[mid]:
                hi = mid
            else:
                lo = mid
        return lo
    if x >= knots[n]:
        return n - 1
    if x < knots[p]:
        return p
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def find_spans(knots, int p, xs, bint left=False):
    cdef const double[:] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[:] x = np.ascontiguousarray(np.atleast_1d(xs), dtype=np.float64)
    cdef Py_ssize_t n = kv.shape[0] - p - 1, i
    out = np.empty(x.shape[0], dtype=np.int64)
    cdef long long[:] o = out
    for i in range(x.shape[0]):
        o[i] = _span(kv, p, n, x[i], left)
    return out


def basis_ders(knots, int p, xs, int nder, bint left=False):
    cdef const double[:] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[:] x = np.ascontiguousarray(np.atleast_1d(xs), dtype=np.float64)
    cdef Py_ssize_t npt = x.shape[0], n = kv.shape[0] - p - 1
    spans = np.empty(npt, dtype=np.int64)
    ders_arr = np.zeros((npt, nder + 1, p + 1))
    cdef long long[:] sp = spans
    cdef double[:, :, :] ders = ders_arr
    cdef double[:, :] ndu = np.empty((p + 1, p + 1))
    cdef double[:, :] a = np.empty((2, p + 1))
    cdef double[:] lft = np.empty(p + 1)
    cdef double[:] rgt = np.empty(p + 1)
    cdef Py_ssize_t k, j, r, s1, s2, rk, pk, j1, j2, jj, kk
    cdef Py_ssize_t s
    cdef double saved, temp, d, xi
    cdef int nd = nder if nder < p else p
    cdef long fac
    with nogil:
        for k in range(npt):
            xi = x[k]
            s = _span(kv, p, n, xi, left)
            sp[k] = s
            ndu[0, 0] = 1.0
            for j in range(1, p + 1):
                lft[j] = xi - kv[s + 1 - j]
                rgt[j] = kv[s + j] - xi
                saved = 0.0
                for r in range(j):
                    ndu[j, r] = rgt[r + 1] + lft[j - r]
                    temp = ndu[r, j - 1] / ndu[j, r]
                    ndu[r, j] = saved + rgt[r + 1] * temp
                    saved = lft[j - r] * temp
                ndu[j, j] = saved
            for j in range(p + 1):
                ders[k, 0, j] = ndu[j, p]
            for r in range(p + 1):
                s1 = 0
                s2 = 1
                for jj in range(p + 1):
                    a[0, jj] = 0.0
                    a[1, jj] = 0.0
                a[0, 0] = 1.0
                for kk in range(1, nd + 1):
                    d = 0.0
                    rk = r - kk
                    pk = p - kk
                    if r >= kk:
                        a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                        d = a[s2, 0] * ndu[rk, pk]
                    j1 = 1 if rk >= -1 else -rk
                    j2 = kk - 1 if r - 1 <= pk else p - r
                    for jj in range(j1, j2 + 1):
                        a[s2, jj] = (a[s1, jj] - a[s1, jj - 1]) / ndu[pk + 1, rk + jj]
                        d += a[s2, jj] * ndu[rk + jj, pk]
                    if r <= pk:
                        a[s2, kk] = -a[s1, kk - 1] / ndu[pk + 1, r]
                        d += a[s2, kk] * ndu[r, pk]
                    ders[k, kk, r] = d
                    s1, s2 = s2, s1
            fac = p
            for kk in range(1, nd + 1):
                for j in range(p + 1):
                    ders[k, kk, j] *= fac
                fac *= p - kk
    return spans, ders_arr


def element_matrices(grads, weights):
    cdef const double[:, :, :, :] g = np.ascontiguousarray(grads, dtype=np.float64)
    cdef const double[:, :] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nel = g.shape[0], nq = g.shape[1], nloc = g.shape[2]
    out = np.zeros((nel, nloc, nloc))
    cdef double[:, :, :] K = out
    cdef Py_ssize_t e, q, i, j
    cdef double wq, gx, gz, v
    with nogil:
        for e in range(nel):
            for q in range(nq):
                wq = w[e, q]
                for i in range(nloc):
                    gx = wq * g[e, q, i, 0]
                    gz = wq * g[e, q, i, 1]
                    for j in range(i, nloc):
                        K[e, i, j] += gx * g[e, q, j, 0] + gz * g[e, q, j, 1]
            for i in range(nloc):
                for j in range(i + 1, nloc):
                    K[e, j, i] = K[e, i, j]
    return out


cdef inline void _keys(double t, double* w) noexcept nogil:
    cdef double t2 = t * t, t3 = t2 * t
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t)
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w[3] = 0.5 * (t3 - t2)


cdef inline bint _interp(const double[:, :] ezp, const double[:, :] erp,
                         const unsigned char[:, :] valid, double z0, double dz,
                         double dr, double z, double r, double* ez, double* er) noexcept nogil:
    cdef Py_ssize_t nz = valid.shape[0], nr = valid.shape[1]
    cdef double fz = (z - z0) / dz, fr = r / dr, tz, tr
    cdef double wz[4]
    cdef double wr[4]
    cdef Py_ssize_t iz, ir, a, b
    cdef double tol = 1e-9, w
    ez[0] = 0.0
    er[0] = 0.0
    if fz < -tol or fz > nz - 1 + tol or fr < -tol or fr > nr - 1 + tol:
        return False
    iz = <Py_ssize_t>floor(fz)
    ir = <Py_ssize_t>floor(fr)
    if iz < 0:
        iz = 0
    if iz > nz - 2:
        iz = nz - 2
    if ir < 0:
        ir = 0
    if ir > nr - 2:
        ir = nr - 2
    if not (valid[iz, ir] and valid[iz + 1, ir] and valid[iz, ir + 1] and valid[iz + 1, ir + 1]):
        return False
    tz = fz - iz
    tr = fr - ir
    if tz < 0.0:
        tz = 0.0
    if tz > 1.0:
        tz = 1.0
    if tr < 0.0:
        tr = 0.0
    if tr > 1.0:
        tr = 1.0
    _keys(tz, wz)
    _keys(tr, wr)
    for a in range(4):
        for b in range(4):
            w = wz[a] * wr[b]
            ez[0] += w * ezp[iz + a, ir + b]
            er[0] += w * erp[iz + a, ir + b]
    return True


def interp_field(ez_pad, er_pad, valid, double z0, double dz, double dr, zs, rs):
    cdef const double[:, :] ezp = np.ascontiguousarray(ez_pad, dtype=np.float64)
    cdef const double[:, :] erp = np.ascontiguousarray(er_pad, dtype=np.float64)
    cdef const unsigned char[:, :] vm = np.ascontiguousarray(valid, dtype=np.uint8)
    zs_a = np.ascontiguousarray(zs, dtype=np.float64)
    rs_a = np.ascontiguousarray(rs, dtype=np.float64)
    cdef const double[:] z = zs_a.ravel()
    cdef const double[:] r = rs_a.ravel()
    cdef Py_ssize_t n = z.shape[0], i
    ez_o = np.empty(n)
    er_o = np.empty(n)
    ok_o = np.empty(n, dtype=bool)
    cdef double[:] ezv = ez_o
    cdef double[:] erv = er_o
    cdef cnp.npy_bool[:] okv = ok_o
    with nogil:
        for i in range(n):
            okv[i] = _interp(ezp, erp, vm, z0, dz, dr, z[i], r[i], &ezv[i], &erv[i])
    shape = zs_a.shape
    return ez_o.reshape(shape), er_o.reshape(shape), ok_o.reshape(shape)


cdef inline bint _rhs(const double[:, :] ezp, const double[:, :] erp,
                      const unsigned char[:, :] valid, double z0, double dz,
                      double dr, double qm, double* y, double* f) noexcept nogil:
    cdef double rho = sqrt(y[0] * y[0] + y[1] * y[1])
    cdef double ez, er, ex, ey, gamma
    cdef bint ok = _interp(ezp, erp, valid, z0, dz, dr, y[2], rho, &ez, &er)
    if rho > 0.0:
        ex = er * y[0] / rho
        ey = er * y[1] / rho
    else:
        ex = 0.0
        ey = 0.0
    gamma = sqrt(1.0 + y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    f[0] = C_LIGHT * y[3] / gamma
    f[1] = C_LIGHT * y[4] / gamma
    f[2] = C_LIGHT * y[5] / gamma
    f[3] = qm * ex
    f[4] = qm * ey
    f[5] = qm * ez
    return ok


def track_rk4(ez_pad, er_pad, valid, double z0, double dz, double dr, state,
              t_emit, double dt, double t_start, long max_steps, planes, double qm):
    cdef const double[:, :] ezp = np.ascontiguousarray(ez_pad, dtype=np.float64)
    cdef const double[:, :] erp = np.ascontiguousarray(er_pad, dtype=np.float64)
    cdef const unsigned char[:, :] vm = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef double[:, :] st = state
    cdef const double[:] te = np.ascontiguousarray(t_emit, dtype=np.float64)
    cdef const double[:] pl = np.ascontiguousarray(planes, dtype=np.float64)
    cdef Py_ssize_t n = st.shape[0], npl = pl.shape[0]
    snaps_a = np.full((npl, n, 7), np.nan)
    status_a = np.zeros(n, dtype=np.int8)
    nextp_a = np.zeros(n, dtype=np.int64)
    cdef double[:, :, :] snaps = snaps_a
    cdef signed char[:] status = status_a
    cdef long long[:] nextp = nextp_a
    cdef double y[6]
    cdef double yo[6]
    cdef double yt[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef long step = 0
    cdef Py_ssize_t i, c, k
    cdef double tn, tn1, t0, h, s, dzs
    cdef bint ok, anylive
    with nogil:
        while step < max_steps:
            anylive = False
            tn = t_start + step * dt
            tn1 = tn + dt
            for i in range(n):
                if status[i] == PENDING or status[i] == RUNNING:
                    anylive = True
                else:
                    continue
                if te[i] >= tn1:
                    continue
                t0 = tn if tn > te[i] else te[i]
                h = tn1 - t0
                for c in range(6):
                    y[c] = st[i, c]
                    yo[c] = y[c]
                ok = _rhs(ezp, erp, vm, z0, dz, dr, qm, y, k1)
                for c in range(6):
                    yt[c] = y[c] + 0.5 * h * k1[c]
                ok = _rhs(ezp, erp, vm, z0, dz, dr, qm, yt, k2) and ok
                for c in range(6):
                    yt[c] = y[c] + 0.5 * h * k2[c]
                ok = _rhs(ezp, erp, vm, z0, dz, dr, qm, yt, k3) and ok
                for c in range(6):
                    yt[c] = y[c] + h * k3[c]
                ok = _rhs(ezp, erp, vm, z0, dz, dr, qm, yt, k4) and ok
                if not ok:
                    status[i] = LOST
                    continue
                for c in range(6):
                    y[c] = y[c] + (h / 6.0) * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
                    st[i, c] = y[c]
                status[i] = RUNNING
                while nextp[i] < npl and y[2] >= pl[nextp[i]]:
                    k = nextp[i]
                    dzs = y[2] - yo[2]
                    s = (pl[k] - yo[2]) / dzs if dzs != 0.0 else 1.0
                    for c in range(6):
                        snaps[k, i, c] = yo[c] + s * (y[c] - yo[c])
                    snaps[k, i, 6] = t0 + s * h
                    nextp[i] += 1
                if nextp[i] >= npl:
                    status[i] = EXITED
            if not anylive:
                break
            step += 1
    return snaps_a, status_a, step
