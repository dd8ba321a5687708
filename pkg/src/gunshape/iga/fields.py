"""Post-processing of a field solution: extrema, samples, profiles, fieldmaps."""
import csv
from dataclasses import dataclass

import numpy as np

from ..geometry import VACUUM, GeometryError, RegionOfInterest, chain_curves, locate
from .space import patch_quadrature


@dataclass(frozen=True)
class FieldMax:
    value: float
    location: np.ndarray
    patch: int


def region_elements(space, rects):
    """Per-patch boolean element masks for parameter rectangles."""
    masks = {}
    for rect in rects:
        pk, u0, u1, v0, v1 = rect
        pk = int(pk)
        if not 0 <= pk < len(space.patches):
            raise GeometryError(f"region refers to missing patch {pk}")
        c = patch_quadrature(space.patches[pk], 1).centers
        sel = (c[:, 0] >= u0) & (c[:, 0] <= u1) & (c[:, 1] >= v0) & (c[:, 1] <= v1)
        masks[pk] = masks.get(pk, np.zeros(c.shape[0], bool)) | sel
    return masks


def _rects(sol, region):
    if region is None:
        return tuple((k, 0.0, 1.0, 0.0, 1.0) for k, p in enumerate(sol.model.patches)
                     if p.material == VACUUM)
    if isinstance(region, RegionOfInterest) or hasattr(region, "rects"):
        return tuple(region.rects)
    return tuple(region)


def max_field(sol, region=None, quads=None):
    """Largest |E| over the quadrature points of the region's elements.

    ``region`` may be a :class:`RegionOfInterest`, a ``RegionSpec``, an
    iterable of ``(patch, u0, u1, v0, v1)`` or ``None`` for all vacuum
    patches.
    """
    masks = region_elements(sol.space, _rects(sol, region))
    best = FieldMax(-np.inf, np.full(2, np.nan), -1)
    for pk, mask in sorted(masks.items()):
        if not mask.any():
            continue
        q = quads[pk] if quads is not None else patch_quadrature(sol.space.patches[pk])
        xi = q.xi[mask].ravel()
        eta = q.eta[mask].ravel()
        e = sol.field(pk, xi, eta)
        mag = np.hypot(e[:, 0], e[:, 1])
        i = int(np.argmax(mag))
        if mag[i] > best.value:
            loc = sol.model.patches[pk].surface.evaluate(xi[i], eta[i])
            best = FieldMax(float(mag[i]), np.asarray(loc, dtype=float), pk)
    if best.patch < 0:
        raise GeometryError("region of interest contains no elements")
    return best


def field_at_points(sol, points, patches=None):
    """|E| components at physical points; NaN where a point is not located."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pk, u, v = locate(sol.model, pts, patches=patches)
    out = np.full((pts.shape[0], 2), np.nan)
    for k in np.unique(pk[pk >= 0]):
        sel = pk == k
        out[sel] = sol.field(int(k), u[sel], v[sel])
    return out


def triple_point_term(sol, roi):
    """Sum of |E| over the triple-point sample set of ``roi``."""
    if roi.tp_points.shape[0] == 0:
        raise GeometryError("empty triple-point sample set")
    total = 0.0
    for k in np.unique(roi.tp_patch):
        sel = roi.tp_patch == k
        e = sol.field(int(k), roi.tp_uv[sel, 0], roi.tp_uv[sel, 1])
        total += float(np.sum(np.hypot(e[:, 0], e[:, 1])))
    return total


def _side_params(side, t):
    if side == 0:
        return np.zeros_like(t), t
    if side == 1:
        return np.ones_like(t), t
    if side == 2:
        return t, np.zeros_like(t)
    return t, np.ones_like(t)


def profile_sides(model, name):
    """Resolve a tag, ``'insulator'`` or ``'patch:side'`` to a list of sides."""
    if name == "insulator":
        itf = model.meta.get("insulator_interface")
        if itf is None:
            raise GeometryError("model has no insulator interface")
        return [tuple(itf)]
    if ":" in name:
        a, b = name.split(":")
        side = (int(a), int(b))
        if not 0 <= side[0] < len(model.patches) or side[1] not in (0, 1, 2, 3):
            raise GeometryError(f"unknown side {name!r}")
        return [side]
    sides = model.sides_with_tag(name)
    if not sides:
        raise GeometryError(f"no boundary carries tag {name!r}")
    return sides


def boundary_profile(sol, name, n_samples=200):
    """Samples ``(s, phi, |E|)`` along a boundary, ordered by arclength.

    Sides with the same tag are chained end to end; each is sampled
    uniformly in its parameter with ``n_samples`` points.
    """
    model = sol.model
    sides = profile_sides(model, name)
    curves = [model.side_curve(*s) for s in sides]
    # chain once to learn the orientation of every side
    chain = chain_curves([c for c in curves], tol=1e-9)
    order = []
    remaining = list(zip(sides, curves))
    for c in chain:
        for j, (s, cc) in enumerate(remaining):
            if np.allclose(cc.points, c.points, atol=0) and np.allclose(cc.weights, c.weights):
                order.append((s, False))
                remaining.pop(j)
                break
            if np.allclose(cc.points[::-1], c.points, atol=0):
                order.append((s, True))
                remaining.pop(j)
                break
    t = np.linspace(0.0, 1.0, n_samples)
    s_all, phi_all, e_all = [], [], []
    s0 = 0.0
    for (pk, side), rev in order:
        tt = t[::-1] if rev else t
        xi, eta = _side_params(side, tt)
        x = model.patches[pk].surface.evaluate(xi, eta)
        seg = np.r_[0.0, np.cumsum(np.hypot(*np.diff(x, axis=0).T))]
        phi = sol.potential(pk, xi, eta)
        e = sol.field(pk, xi, eta)
        s_all.append(s0 + seg)
        phi_all.append(phi)
        e_all.append(np.hypot(e[:, 0], e[:, 1]))
        s0 += seg[-1]
    return np.concatenate(s_all), np.concatenate(phi_all), np.concatenate(e_all)


def write_profile_csv(path, s, phi, emag, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["s", "phi", "Emag"])
        for row in zip(s, phi, emag):
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# fieldmaps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FieldmapGrid:
    nz: int
    nr: int
    z0: float
    z1: float
    r0: float
    r1: float

    def axes(self):
        return np.linspace(self.z0, self.z1, self.nz), np.linspace(self.r0, self.r1, self.nr)


@dataclass(frozen=True, eq=False)
class FieldmapData:
    grid: FieldmapGrid
    ez: np.ndarray    # (nz, nr)
    er: np.ndarray
    mask: np.ndarray  # (nz, nr) bool, True = vacuum sample


def sample_fieldmap(sol, grid):
    """Sample (E_z, E_rho) on a regular grid; E = -grad(phi) in V/m.

    Nodes outside the vacuum patches are zero and masked out. E_rho is set
    to zero on the axis, where it vanishes by symmetry.
    """
    if grid.nz < 2 or grid.nr < 2:
        raise ValueError("fieldmap grids need at least 2 nodes per direction")
    if grid.r0 < 0 or grid.z1 <= grid.z0 or grid.r1 <= grid.r0:
        raise ValueError("invalid fieldmap extent")
    pts_all = np.concatenate([p.surface.points.reshape(-1, 2) for p in sol.model.patches])
    lo, hi = pts_all.min(axis=0), pts_all.max(axis=0)
    eps = 1e-12 * max(1.0, float(np.abs(pts_all).max()))
    if (grid.z0 < lo[1] - eps or grid.z1 > hi[1] + eps or grid.r0 < lo[0] - eps
            or grid.r1 > hi[0] + eps):
        raise GeometryError("fieldmap grid extends outside the domain bounding box")
    zs, rs = grid.axes()
    Z, R = np.meshgrid(zs, rs, indexing="ij")
    pts = np.column_stack([R.ravel(), Z.ravel()])
    vac = [k for k, p in enumerate(sol.model.patches) if p.material == VACUUM]
    e = field_at_points(sol, pts, patches=vac)
    mask = np.all(np.isfinite(e), axis=1)
    e = np.where(mask[:, None], e, 0.0)
    er = e[:, 0].reshape(grid.nz, grid.nr)
    ez = e[:, 1].reshape(grid.nz, grid.nr)
    er[:, rs == 0.0] = 0.0
    return FieldmapData(grid, ez, er, mask.reshape(grid.nz, grid.nr))


def write_fieldmap(path, data):
    g = data.grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {g.nz} {g.nr} {g.z0!r} {g.z1!r} {g.r0!r} {g.r1!r}\n")
        zs, rs = g.axes()
        for i, z in enumerate(zs):
            for j, r in enumerate(rs):
                fh.write("%.17g %.17g %.17g %.17g\n" % (z, r, data.ez[i, j], data.er[i, j]))
    with open(str(path) + ".mask", "w", encoding="utf-8") as fh:
        fh.write("\n".join("1" if m else "0" for m in data.mask.ravel()) + "\n")


def export_fieldmap(sol, grid, path):
    data = sample_fieldmap(sol, grid)
    write_fieldmap(path, data)
    return data


def read_fieldmap(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != "#" or len(header) != 7:
            raise ValueError(f"{path}: bad fieldmap header")
        nz, nr = int(header[1]), int(header[2])
        z0, z1, r0, r1 = (float(v) for v in header[3:])
        rows = np.loadtxt(fh, ndmin=2)
    if rows.shape != (nz * nr, 4):
        raise ValueError(f"{path}: expected {nz * nr} rows of 4 columns")
    try:
        with open(str(path) + ".mask", encoding="utf-8") as fh:
            mask = np.array([int(v) for v in fh.read().split()], dtype=bool)
    except FileNotFoundError:
        mask = np.ones(nz * nr, dtype=bool)
    if mask.size != nz * nr:
        raise ValueError(f"{path}.mask: expected {nz * nr} entries")
    grid = FieldmapGrid(nz, nr, z0, z1, r0, r1)
    return FieldmapData(grid, rows[:, 2].reshape(nz, nr), rows[:, 3].reshape(nz, nr),
                        mask.reshape(nz, nr))
