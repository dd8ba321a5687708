"""Discrete multipatch spline spaces with conforming global numbering."""
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..geometry import DIRICHLET_TAGS, GeometryError, interface_mismatches
from ..splines import KnotVector

# Where Dirichlet sides meet with different voltages the corner takes the
# value of the higher-priority tag.
TAG_PRIORITY = {"gamma_d1": 3, "gamma_d2": 2, "gamma_d0": 1}


class SpaceError(GeometryError):
    pass


@dataclass(frozen=True, eq=False)
class PatchSpace:
    kv_u: KnotVector
    kv_v: KnotVector
    dofs: np.ndarray  # (nu, nv) global indices

    @property
    def shape(self):
        return self.dofs.shape

    def side_dofs(self, side):
        return side_indices(self.dofs, side)


def side_indices(arr, side):
    if side == 0:
        return arr[0, :]
    if side == 1:
        return arr[-1, :]
    if side == 2:
        return arr[:, 0]
    if side == 3:
        return arr[:, -1]
    raise SpaceError(f"unknown side {side}")


@dataclass(frozen=True, eq=False)
class SplineSpace:
    """Tensor-product spline space on every patch, glued at interfaces.

    ``dirichlet`` maps a global index to its tag; ``free`` and ``fixed``
    split the global numbering.
    """
    degree: int
    regularity: int
    n_sub: int
    patches: tuple
    n_dofs: int
    dirichlet: dict
    free: np.ndarray
    fixed: np.ndarray

    @property
    def n_free(self):
        return int(self.free.size)

    def dirichlet_values(self, voltages):
        vals = np.array([float(voltages[self.dirichlet[i]]) for i in self.fixed])
        return vals


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_space(model, degree=3, regularity=None, n_sub=16):
    """Degree-``degree`` splines with ``n_sub`` uniform elements per direction.

    The discrete space is set up on the parameter square independently of
    the geometry's own degree and knots, so a degree-7 geometry can carry a
    cubic field space.
    """
    regularity = degree - 1 if regularity is None else regularity
    if degree < 1:
        raise SpaceError("field degree must be >= 1")
    if not 0 <= regularity <= degree - 1:
        raise SpaceError("need 0 <= regularity <= degree - 1")
    if n_sub < 1:
        raise SpaceError("n_sub must be >= 1")
    bad = interface_mismatches(model)
    if bad:
        raise SpaceError(f"non-conforming interfaces: {bad}")
    kv = KnotVector.open_uniform(degree, n_sub, regularity)
    n1 = kv.num_basis
    npatch = len(model.patches)
    local = np.arange(npatch * n1 * n1).reshape(npatch, n1, n1)
    uf = _UnionFind(local.size)
    for itf in model.interfaces:
        a = side_indices(local[itf.patch_a], itf.side_a)
        b = side_indices(local[itf.patch_b], itf.side_b)
        if itf.reversed:
            b = b[::-1]
        for i, j in zip(a, b):
            uf.union(int(i), int(j))
    roots = np.array([uf.find(i) for i in range(local.size)])
    _, glob = np.unique(roots, return_inverse=True)
    glob = glob.reshape(local.shape)
    n_dofs = int(glob.max()) + 1

    dirichlet = {}
    for (pk, side), tag in model.tags.items():
        if tag not in DIRICHLET_TAGS:
            continue
        for i in side_indices(glob[pk], side):
            i = int(i)
            old = dirichlet.get(i)
            if old is None or TAG_PRIORITY[tag] > TAG_PRIORITY[old]:
                dirichlet[i] = tag
    fixed = np.array(sorted(dirichlet), dtype=np.int64)
    mask = np.ones(n_dofs, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    patches = tuple(PatchSpace(kv, kv, glob[k]) for k in range(npatch))
    return SplineSpace(degree, regularity, n_sub, patches, n_dofs, dirichlet, free, fixed)


def tensor_basis(ps, xi, eta):
    """Values and parametric gradients of the nonzero basis functions.

    Returns ``(idx, N, dN)``: global indices ``(n, nloc)``, values
    ``(n, nloc)`` and parametric gradients ``(n, nloc, 2)``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    p, q = ps.kv_u.degree, ps.kv_v.degree
    su, Bu = kernels.basis_ders(ps.kv_u.knots, p, xi, 1)
    sv, Bv = kernels.basis_ders(ps.kv_v.knots, q, eta, 1)
    iu = su[:, None] - p + np.arange(p + 1)
    iv = sv[:, None] - q + np.arange(q + 1)
    idx = ps.dofs[iu[:, :, None], iv[:, None, :]].reshape(xi.size, -1)
    N = (Bu[:, 0, :, None] * Bv[:, 0, None, :]).reshape(xi.size, -1)
    dNu = (Bu[:, 1, :, None] * Bv[:, 0, None, :]).reshape(xi.size, -1)
    dNv = (Bu[:, 0, :, None] * Bv[:, 1, None, :]).reshape(xi.size, -1)
    return idx, N, np.stack([dNu, dNv], axis=-1)


@dataclass(frozen=True, eq=False)
class PatchQuadrature:
    """Gauss points of every element of one patch, element-major.

    ``xi``/``eta`` have shape ``(nel, nq)``; ``w`` holds the parametric
    weights including the element size; ``centers`` are element centres.
    """
    xi: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    idx: np.ndarray      # (nel, nloc)
    N: np.ndarray        # (nel, nq, nloc)
    dN: np.ndarray       # (nel, nq, nloc, 2)
    centers: np.ndarray  # (nel, 2)


def patch_quadrature(ps, n_points=None):
    p = max(ps.kv_u.degree, ps.kv_v.degree)
    n_points = n_points or p + 1
    x, w = np.polynomial.legendre.leggauss(n_points)
    bu, bv = ps.kv_u.breaks, ps.kv_v.breaks
    eu0, eu1 = bu[:-1], bu[1:]
    ev0, ev1 = bv[:-1], bv[1:]
    # element-major tensor layout: (eu, ev, qu, qv)
    qu = 0.5 * (eu1 - eu0)[:, None] * (x + 1.0)[None, :] + eu0[:, None]
    qv = 0.5 * (ev1 - ev0)[:, None] * (x + 1.0)[None, :] + ev0[:, None]
    neu, nev, nq = eu0.size, ev0.size, x.size
    XI = np.broadcast_to(qu[:, None, :, None], (neu, nev, nq, nq)).reshape(neu * nev, nq * nq)
    ETA = np.broadcast_to(qv[None, :, None, :], (neu, nev, nq, nq)).reshape(neu * nev, nq * nq)
    W = (0.25 * (eu1 - eu0)[:, None, None, None] * (ev1 - ev0)[None, :, None, None]
         * w[None, None, :, None] * w[None, None, None, :])
    W = W.reshape(neu * nev, nq * nq)
    idx, N, dN = tensor_basis(ps, XI.ravel(), ETA.ravel())
    nel, nqq = XI.shape
    nloc = idx.shape[1]
    idx = idx.reshape(nel, nqq, nloc)[:, 0, :]
    cu = 0.5 * (eu0 + eu1)
    cv = 0.5 * (ev0 + ev1)
    centers = np.stack(np.meshgrid(cu, cv, indexing="ij"), axis=-1).reshape(-1, 2)
    return PatchQuadrature(XI, ETA, W, idx, N.reshape(nel, nqq, nloc),
                           dN.reshape(nel, nqq, nloc, 2), centers)
