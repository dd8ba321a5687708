"""Multipatch axisymmetric gun model.

A model is a set of conforming NURBS patches in the (rho, z) half plane with
boundary tags, material labels and a *design map* naming the electrode curve
whose interior control points are the optimization variables.

Side numbering follows :mod:`gunshape.splines`: 0 -> u=0, 1 -> u=1,
2 -> v=0, 3 -> v=1.
"""
import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import splines
from .splines import KnotVector, NurbsCurve, NurbsSurface

EPS0 = 8.8541878128e-12
VACUUM, INSULATOR = "vacuum", "insulator"
TAGS = ("gamma_d0", "gamma_d1", "gamma_d2", "axis", "natural")
DIRICHLET_TAGS = ("gamma_d0", "gamma_d1", "gamma_d2")
DEFAULT_VOLTAGES = {"gamma_d0": 0.0, "gamma_d1": -300e3, "gamma_d2": 1e3}
SCHEMA_VERSION = 1


class GeometryError(ValueError):
    """Malformed or inconsistent model."""


class InfeasibleGeometry(GeometryError):
    """A design produces an inverted (non-invertible) patch map."""


class DesignBoundsError(GeometryError):
    """A design vector lies outside its admissible box."""


@dataclass(frozen=True, eq=False)
class Patch:
    surface: NurbsSurface
    material: str = VACUUM
    name: str = ""


@dataclass(frozen=True)
class Interface:
    patch_a: int
    side_a: int
    patch_b: int
    side_b: int
    reversed: bool = False


@dataclass(frozen=True, eq=False)
class DesignMap:
    """Free control points of one patch side; bounds are (k, 2) arrays.

    ``blend`` optionally gives, for every control row across the patch, the
    share of the side displacement that row follows (1 at the design side,
    0 at the opposite side). By default the Greville abscissae are used.
    """
    patch: int
    side: int
    free: tuple
    lower: np.ndarray
    upper: np.ndarray
    blend: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(int(i) for i in self.free))
        if self.blend is not None:
            object.__setattr__(self, "blend", tuple(float(b) for b in self.blend))
        object.__setattr__(self, "lower", splines._frozen(self.lower))
        object.__setattr__(self, "upper", splines._frozen(self.upper))
        if self.lower.shape != (len(self.free), 2) or self.upper.shape != self.lower.shape:
            raise GeometryError("design bounds must be (n_free, 2) arrays")
        if np.any(self.lower > self.upper):
            raise GeometryError("design lower bound exceeds upper bound")


@dataclass(frozen=True, eq=False)
class DesignVector:
    """Free electrode control points (rho_i, z_i) and their box bounds."""
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def flat(self):
        return np.asarray(self.values, dtype=float).ravel()

    @property
    def flat_lower(self):
        return np.asarray(self.lower, dtype=float).ravel()

    @property
    def flat_upper(self):
        return np.asarray(self.upper, dtype=float).ravel()

    def with_flat(self, x):
        return DesignVector(np.asarray(x, dtype=float).reshape(np.shape(self.values)),
                            self.lower, self.upper)

    def in_bounds(self):
        v = np.asarray(self.values)
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))


@dataclass(frozen=True)
class RegionSpec:
    """Where the max-field objective looks, and how the triple point is sampled.

    ``rects`` holds ``(patch, u0, u1, v0, v1)``; an element belongs to the
    region when its parametric centre lies in the rectangle.
    """
    rects: tuple
    tp_radius: float = 1e-3
    tp_count: int = 8


@dataclass(frozen=True, eq=False)
class MultiPatchModel:
    patches: tuple
    interfaces: tuple = ()
    tags: dict = field(default_factory=dict)
    eps0: float = EPS0
    eps_r_insulator: float = 9.0
    triple_point: np.ndarray = None
    design: DesignMap = None
    region: RegionSpec = None
    voltages: dict = field(default_factory=lambda: dict(DEFAULT_VOLTAGES))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "interfaces", tuple(self.interfaces))
        object.__setattr__(self, "tags", {(int(k[0]), int(k[1])): v for k, v in self.tags.items()})
        if self.triple_point is not None:
            object.__setattr__(self, "triple_point", splines._frozen(self.triple_point))
        for tag in self.tags.values():
            if tag not in TAGS:
                raise GeometryError(f"unknown boundary tag {tag!r}")

    def permittivity(self, patch_index):
        if self.patches[patch_index].material == INSULATOR:
            return self.eps0 * self.eps_r_insulator
        return self.eps0

    def side_curve(self, patch, side):
        return self.patches[patch].surface.boundary(side)

    def exterior_sides(self):
        inner = set()
        for itf in self.interfaces:
            inner.add((itf.patch_a, itf.side_a))
            inner.add((itf.patch_b, itf.side_b))
        return [(p, s) for p in range(len(self.patches)) for s in splines.SIDES
                if (p, s) not in inner]

    def sides_with_tag(self, tag):
        return sorted(k for k, v in self.tags.items() if v == tag)

    def with_patches(self, patches, **kw):
        return replace(self, patches=tuple(patches), **kw)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Diagnostics:
    min_jacobian: float = np.inf
    negative_jacobian: list = field(default_factory=list)
    conformity: list = field(default_factory=list)
    untagged: list = field(default_factory=list)
    negative_rho: list = field(default_factory=list)
    axis: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.negative_jacobian or self.conformity or self.untagged
                    or self.negative_rho or self.axis)


def jacobian_determinants(surface, n=16):
    """det J on an ``n x n`` grid of Gauss-like interior samples per element."""
    us = _sample_params(surface.kv_u, n)
    vs = _sample_params(surface.kv_v, n)
    _, J = surface.evaluate_grid(us, vs, jacobian=True)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def _sample_params(kv, n):
    br = kv.breaks
    t = (np.arange(n) + 0.5) / n
    return np.concatenate([a + (b - a) * t for a, b in zip(br[:-1], br[1:])] + [br[[0, -1]]])


def interface_mismatches(model, tol=1e-9):
    bad = []
    for itf in model.interfaces:
        ca = model.side_curve(itf.patch_a, itf.side_a)
        cb = model.side_curve(itf.patch_b, itf.side_b)
        if itf.reversed:
            cb = cb.reversed()
        scale = max(1.0, float(np.abs(ca.points).max()))
        same = (ca.kv == cb.kv and np.allclose(ca.points, cb.points, atol=tol * scale, rtol=0)
                and np.allclose(ca.weights, cb.weights, atol=tol, rtol=0))
        if not same:
            bad.append(itf)
    return bad


def validate(model, n=16, tol=1e-9):
    diag = Diagnostics()
    for k, patch in enumerate(model.patches):
        det = jacobian_determinants(patch.surface, n)
        m = float(det.min())
        diag.min_jacobian = min(diag.min_jacobian, m)
        if m <= 0.0:
            diag.negative_jacobian.append(k)
        us = _sample_params(patch.surface.kv_u, n)
        vs = _sample_params(patch.surface.kv_v, n)
        if np.any(patch.surface.evaluate_grid(us, vs)[..., 0] < -tol):
            diag.negative_rho.append(k)
    diag.conformity.extend(interface_mismatches(model, tol))
    for side in model.exterior_sides():
        tag = model.tags.get(side)
        if tag is None:
            diag.untagged.append(side)
        elif tag == "axis":
            if np.any(np.abs(model.side_curve(*side).points[:, 0]) > tol):
                diag.axis.append(side)
    return diag


# ---------------------------------------------------------------------------
# design application
# ---------------------------------------------------------------------------

def design_vector(model):
    dm = model.design
    if dm is None:
        raise GeometryError("model has no design map")
    curve = model.side_curve(dm.patch, dm.side)
    return DesignVector(curve.points[list(dm.free)].copy(), dm.lower, dm.upper)


def _side_slice(side):
    return {0: (0, slice(None)), 1: (-1, slice(None)),
            2: (slice(None), 0), 3: (slice(None), -1)}[side]


def _blend(dm, kv):
    if dm.blend is not None:
        if len(dm.blend) != kv.num_basis:
            raise GeometryError("design blend does not match the patch net")
        return np.asarray(dm.blend)
    g = kv.greville()
    return 1.0 - g if dm.side in (0, 2) else g


def apply_design(model, d, check=True, n_check=8):
    """Move the design curve's free control points to ``d``.

    The rest of the patch net follows by a linear transfinite blend: each row
    parallel to the design side is shifted by the side displacement weighted
    with the row's blend factor (``1 - g`` for Greville abscissa ``g`` unless
    the design map says otherwise), so the opposite side stays fixed and all
    interfaces stay conforming.
    """
    dm = model.design
    values = np.asarray(d.values if isinstance(d, DesignVector) else d, dtype=float)
    values = values.reshape(len(dm.free), 2)
    if np.any(values < dm.lower) or np.any(values > dm.upper):
        raise DesignBoundsError("design outside the admissible box")
    patch = model.patches[dm.patch]
    surf = patch.surface
    pts = np.array(surf.points)
    if dm.side in (2, 3):
        side_pts = pts[:, 0 if dm.side == 2 else -1]
        blend = _blend(dm, surf.kv_v)
        disp = np.zeros_like(side_pts)
        disp[list(dm.free)] = values - side_pts[list(dm.free)]
        pts = pts + blend[None, :, None] * disp[:, None, :]
    else:
        side_pts = pts[0 if dm.side == 0 else -1]
        blend = _blend(dm, surf.kv_u)
        disp = np.zeros_like(side_pts)
        disp[list(dm.free)] = values - side_pts[list(dm.free)]
        pts = pts + blend[:, None, None] * disp[None, :, :]
    pts[_side_slice(dm.side)][list(dm.free)] = values
    new_patch = replace(patch, surface=surf.with_points(pts))
    patches = list(model.patches)
    patches[dm.patch] = new_patch
    out = model.with_patches(patches)
    if check:
        det = jacobian_determinants(new_patch.surface, n_check)
        if det.min() <= 0.0:
            raise InfeasibleGeometry(f"patch {dm.patch} folds (min det J = {det.min():.3e})")
    return out


def refine_design_curve(model, insert=(), elevate=0):
    """Refine the design curve's parameter direction consistently.

    Every patch whose knot vector is tied to the design direction through
    interfaces gets the same knot insertions / degree elevation, so the
    model stays conforming. The mapped geometry is unchanged.
    """
    dm = model.design
    direction = 0 if dm.side in (2, 3) else 1
    todo = [(dm.patch, direction, False)]
    seen = {}
    while todo:
        pk, dk, rev = todo.pop()
        if pk in seen:
            continue
        seen[pk] = (dk, rev)
        par_sides = (2, 3) if dk == 0 else (0, 1)
        for itf in model.interfaces:
            for a, sa, b, sb in ((itf.patch_a, itf.side_a, itf.patch_b, itf.side_b),
                                 (itf.patch_b, itf.side_b, itf.patch_a, itf.side_a)):
                if a == pk and sa in par_sides and b not in seen:
                    todo.append((b, 0 if sb in (2, 3) else 1, rev ^ itf.reversed))
    patches = list(model.patches)
    for pk, (dk, rev) in seen.items():
        s = patches[pk].surface
        if elevate:
            s = s.elevate_degree(elevate, dk)
        for x in insert:
            s = s.insert_knot(1.0 - x if rev else x, dk)
        patches[pk] = replace(patches[pk], surface=s)
    curve = patches[dm.patch].surface.boundary(dm.side)
    n = curve.points.shape[0]
    free = tuple(range(1, n - 1))
    # the refinement operator is a convex combination of control points, so
    # mapping the box corners through it gives a box containing the image of
    # the old one: every old design stays admissible
    old_curve = model.side_curve(dm.patch, dm.side)
    lo = _refine_points(old_curve, dm.free, dm.lower, insert, elevate)
    hi = _refine_points(old_curve, dm.free, dm.upper, insert, elevate)
    # round-off (and rational weights) may push a point a hair outside
    lo, hi = np.minimum(lo, curve.points), np.maximum(hi, curve.points)
    new_dm = DesignMap(dm.patch, dm.side, free, lo[list(free)], hi[list(free)], dm.blend)
    return model.with_patches(patches, design=new_dm, meta=dict(model.meta))


def _refine_points(curve, free, values, insert, elevate):
    pts = np.array(curve.points)
    pts[list(free)] = values
    c = splines.NurbsCurve(curve.kv, pts, curve.weights)
    if elevate:
        c = splines.elevate_degree(c, elevate)
    for x in insert:
        c = splines.insert_knot(c, x)
    return np.array(c.points)


# ---------------------------------------------------------------------------
# volume of the electrode (solid of revolution)
# ---------------------------------------------------------------------------

def _gauss(n):
    return np.polynomial.legendre.leggauss(n)


def curve_revolution_flux(curve, n_extra=0):
    """pi * integral of rho^2 dz along ``curve`` (Gauss per knot span).

    The rule integrates the polynomial integrand exactly; rational curves get
    extra points.
    """
    p = curve.degree
    n = (3 * p) // 2 + 1 + n_extra + (12 if curve.is_rational else 0)
    x, w = _gauss(n)
    br = curve.kv.breaks
    total = 0.0
    for a, b in zip(br[:-1], br[1:]):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        pt, d = curve.evaluate(t, derivs=1)
        total += 0.5 * (b - a) * np.sum(w * pt[:, 0] ** 2 * d[:, 1])
    return np.pi * total


def chain_curves(curves, tol=1e-10):
    """Order and orient curves into one chain; raises if they do not connect."""
    curves = list(curves)
    if not curves:
        raise GeometryError("empty boundary loop")
    chain = [curves.pop(0)]
    while curves:
        end = chain[-1].points[-1]
        start = chain[0].points[0]
        for i, c in enumerate(curves):
            if np.allclose(c.points[0], end, atol=tol):
                chain.append(curves.pop(i))
                break
            if np.allclose(c.points[-1], end, atol=tol):
                chain.append(curves.pop(i).reversed())
                break
            if np.allclose(c.points[-1], start, atol=tol):
                chain.insert(0, curves.pop(i))
                break
            if np.allclose(c.points[0], start, atol=tol):
                chain.insert(0, curves.pop(i).reversed())
                break
        else:
            raise GeometryError("electrode boundary loop is open")
    return chain


def revolved_volume(curves, tol=1e-10):
    """Volume enclosed by revolving a closed (rho, z) loop about the axis.

    The loop may be closed either directly or through the symmetry axis
    (both chain ends at rho = 0), since the axis contributes nothing.
    """
    chain = chain_curves(curves, tol)
    a, b = chain[0].points[0], chain[-1].points[-1]
    closed = np.allclose(a, b, atol=tol) or (abs(a[0]) <= tol and abs(b[0]) <= tol)
    if not closed:
        raise GeometryError("electrode boundary loop is open")
    return abs(sum(curve_revolution_flux(c) for c in chain))


def electrode_curves(model):
    return [model.side_curve(p, s) for p, s in model.sides_with_tag("gamma_d1")]


def electrode_volume(model):
    return revolved_volume(electrode_curves(model))


def scale_model(model, s):
    patches = [replace(p, surface=p.surface.with_points(p.surface.points * s))
               for p in model.patches]
    tp = None if model.triple_point is None else model.triple_point * s
    return model.with_patches(patches, triple_point=tp)


# ---------------------------------------------------------------------------
# benchmark inverted-insulator gun
# ---------------------------------------------------------------------------

@dataclass
class GunConfig:
    """Dimensions of the benchmark gun cross-section (metres)."""
    gap: float = 0.080
    aperture_radius: float = 0.010
    chamber_radius: float = 0.150
    pipe_length: float = 0.040
    electrode_radius: float = 0.050
    electrode_length: float = 0.082
    corner_radius: float = 0.010
    insulator_radius: float = 0.030
    insulator_length: float = 0.060
    eps_r_insulator: float = 9.0
    curve_degree: int = 7
    fit_samples: int = 200
    mid_curve_rho: tuple = (0.040, 0.080, 0.100, 0.105, 0.100, 0.080, 0.040)
    design_halfwidth: float = 0.015
    layer_grading: float = 0.10
    smooth_cathode_edge: bool = True
    region_u: tuple = (0.0, 0.9)
    region_v: tuple = (0.0, 0.5)
    tp_radius: float = 1e-3
    tp_count: int = 8
    voltages: dict = field(default_factory=lambda: dict(DEFAULT_VOLTAGES))

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names - {"_comment", "comment", "labels"}
        if unknown:
            raise GeometryError(f"unknown gun config keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}


def flat_design_outline(cfg, n=None):
    """Sampled outline of the 'flat' electrode: flat face, round corners, flat back.

    Runs from the cathode edge ``(a, 0)`` to the triple point
    ``(r_ins, -L)``. Returns points and chord-length parameters.
    """
    n = n or cfg.fit_samples
    a, R, L, rc = cfg.aperture_radius, cfg.electrode_radius, cfg.electrode_length, cfg.corner_radius
    ri = cfg.insulator_radius
    segs = []
    segs.append(("line", (a, 0.0), (R - rc, 0.0)))
    segs.append(("arc", (R - rc, -rc), np.pi / 2, 0.0))
    segs.append(("line", (R, -rc), (R, -L + rc)))
    segs.append(("arc", (R - rc, -L + rc), 0.0, -np.pi / 2))
    segs.append(("line", (R - rc, -L), (ri, -L)))
    lengths = []
    for s in segs:
        lengths.append(np.hypot(*np.subtract(s[2], s[1])) if s[0] == "line" else rc * np.pi / 2)
    total = sum(lengths)
    ts = np.linspace(0.0, total, n)
    out = []
    acc = 0.0
    for s, ln in zip(segs, lengths):
        sel = ts[(ts >= acc) & (ts <= acc + ln)] if s is segs[-1] else ts[(ts >= acc) & (ts < acc + ln)]
        f = (sel - acc) / ln
        if s[0] == "line":
            p0, p1 = np.array(s[1]), np.array(s[2])
            out.append(p0 + f[:, None] * (p1 - p0))
        else:
            c, t0, t1 = np.array(s[1]), s[2], s[3]
            th = t0 + f * (t1 - t0)
            out.append(c + rc * np.column_stack([np.cos(th), np.sin(th)]))
        acc += ln
    pts = np.vstack(out)
    pts[0] = (a, 0.0)
    pts[-1] = (ri, -L)
    return pts, splines.chord_length_params(pts)


def fit_flat_design(cfg, kv=None):
    """Least-squares fit of the flat outline with pinned end points.

    With ``smooth_cathode_edge`` the second control point is also held on the
    cathode plane, so the curve leaves the cathode edge tangentially instead
    of forming a convex (field-singular) corner there.
    """
    pts, u = flat_design_outline(cfg)
    if kv is None:
        p = cfg.curve_degree
        kv = KnotVector(np.r_[np.zeros(p + 1), np.ones(p + 1)], p)
    fixed = {(1, 1): 0.0} if cfg.smooth_cathode_edge else None
    return splines.least_squares_fit(u, pts, kv, fix_endpoints=True, fixed=fixed), (u, pts)


def _bezier_line(p0, p1, kv):
    n = kv.num_basis
    g = kv.greville()
    return NurbsCurve(kv, np.asarray(p0) + g[:, None] * (np.asarray(p1) - np.asarray(p0)))


def graded_layer(c0, c1, fraction):
    """Surface from ``c0`` (v=0) to ``c1`` (v=1), quadratic across.

    The middle control row sits at ``fraction`` of the way, so elements
    are thinner next to ``c0`` when ``fraction < 0.5``.
    """
    if c0.kv != c1.kv:
        raise GeometryError("layer curves must share a knot vector")
    mid = c0.points + fraction * (c1.points - c0.points)
    pts = np.stack([c0.points, mid, c1.points], axis=1)
    w = np.stack([c0.weights, 0.5 * (c0.weights + c1.weights), c1.weights], axis=1)
    return NurbsSurface(c0.kv, KnotVector([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2), pts, w)


def build_gun_model(cfg=None):
    """Five-patch cross-section of the benchmark inverted-insulator gun.

    Patches: 0 beam pipe, 1 cathode-anode gap near the axis, 2 layer around
    the designable electrode curve, 3 outer vacuum up to the chamber wall,
    4 insulator. Returns the model and its initial design vector.
    """
    cfg = cfg or GunConfig()
    a, G, R = cfg.aperture_radius, cfg.gap, cfg.chamber_radius
    L, ri, Li = cfg.electrode_length, cfg.insulator_radius, cfg.insulator_length
    Lp = cfg.pipe_length
    z_eb = -L
    z_back = -L - Li
    if min(a, G, R, L, ri, Li, Lp, cfg.electrode_radius) <= 0:
        raise GeometryError("gun dimensions must be positive")
    if not a < ri < cfg.electrode_radius < R:
        raise GeometryError("need aperture < insulator radius < electrode radius < chamber radius")
    if cfg.corner_radius * 2 >= min(L, cfg.electrode_radius - ri):
        raise GeometryError("corner radius too large for the electrode")
    gam = cfg.layer_grading
    if not 0.0 < gam < 1.0:
        raise GeometryError("layer_grading must lie in (0, 1)")

    cap, _ = fit_flat_design(cfg)
    kv = cap.kv
    p = kv.degree
    rho_mid = np.asarray(cfg.mid_curve_rho, dtype=float)
    if rho_mid.size != p:
        raise GeometryError(f"mid_curve_rho needs {p} entries for degree {p}")
    g = kv.greville()
    mid_pts = np.column_stack([np.r_[a, rho_mid], G + g * (z_back - G)])
    mid_pts[-1, 0] = ri
    mid = NurbsCurve(kv, mid_pts)
    if np.any(mid_pts[:, 0] >= R):
        raise GeometryError("mid curve leaves the chamber")
    wall = _bezier_line((R, G), (R, z_back), kv)

    lin = KnotVector([0.0, 0.0, 1.0, 1.0], 1)

    def rect(r0, r1, z0, z1):
        pts = np.array([[[r0, z0], [r0, z1]], [[r1, z0], [r1, z1]]], dtype=float)
        return NurbsSurface(lin, lin, pts)

    def hline(r0, r1, z):
        return NurbsCurve(lin, [[r0, z], [r1, z]])

    # the cap layer is graded towards the electrode; the gap and insulator
    # patches share its parametrization along their common sides
    patches = [
        Patch(rect(0.0, a, G, G + Lp), VACUUM, "pipe"),
        Patch(graded_layer(hline(0.0, a, 0.0), hline(0.0, a, G), gam), VACUUM, "gap"),
        Patch(graded_layer(cap, mid, gam), VACUUM, "cap_layer"),
        Patch(NurbsSurface.ruled(mid, wall), VACUUM, "outer"),
        Patch(graded_layer(hline(0.0, ri, z_back), hline(0.0, ri, z_eb), 1.0 - gam),
              INSULATOR, "insulator"),
    ]
    interfaces = [
        Interface(0, 2, 1, 3),
        Interface(1, 1, 2, 0),
        Interface(2, 1, 4, 1, reversed=True),
        Interface(2, 3, 3, 2),
    ]
    tags = {
        (0, 0): "axis", (0, 1): "gamma_d2", (0, 3): "natural",
        (1, 0): "axis", (1, 2): "gamma_d1",
        (2, 2): "gamma_d1",
        (3, 0): "gamma_d2", (3, 1): "gamma_d0", (3, 3): "gamma_d0",
        (4, 0): "axis", (4, 2): "gamma_d0", (4, 3): "gamma_d1",
    }
    free = tuple(range(1, p))
    init = cap.points[1:-1]
    hw = cfg.design_halfwidth
    lower = init - hw
    upper = init + hw
    if cfg.smooth_cathode_edge:
        # the curve may rise into the gap at the cathode edge but not dip below
        lower[0, 1] = 0.0
    dm = DesignMap(2, 2, free, lower, upper, blend=(1.0, 1.0 - gam, 0.0))
    region = RegionSpec(((2,) + tuple(cfg.region_u) + tuple(cfg.region_v),),
                        cfg.tp_radius, cfg.tp_count)
    meta = {"config": cfg.to_dict(), "cathode_side": [1, 2], "anode_sides": [[3, 0], [0, 1]],
            "insulator_interface": [2, 1]}
    model = MultiPatchModel(patches, interfaces, tags, EPS0, cfg.eps_r_insulator,
                            triple_point=cap.points[-1], design=dm, region=region,
                            voltages=dict(cfg.voltages), meta=meta)
    diag = validate(model)
    if diag.negative_jacobian:
        raise GeometryError(f"self-intersecting configuration (patches {diag.negative_jacobian})")
    if diag.conformity:
        raise GeometryError("non-conforming patch layout")
    return model, design_vector(model)


# ---------------------------------------------------------------------------
# point location and region of interest
# ---------------------------------------------------------------------------

def locate(model, points, patches=None, tol=1e-12, n_seed=24, max_iter=50):
    """Find ``(patch, xi, eta)`` for physical points by Newton inversion.

    Returns arrays ``patch`` (-1 where not found), ``xi``, ``eta``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npt = pts.shape[0]
    out_p = np.full(npt, -1, dtype=np.int64)
    out_u = np.zeros(npt)
    out_v = np.zeros(npt)
    cand = range(len(model.patches)) if patches is None else patches
    scale = max(1e-3, float(np.abs(pts).max()))
    for k in cand:
        todo = np.nonzero(out_p < 0)[0]
        if todo.size == 0:
            break
        surf = model.patches[k].surface
        cp = surf.points.reshape(-1, 2)
        lo, hi = cp.min(axis=0) - 1e-9, cp.max(axis=0) + 1e-9
        inside = np.all((pts[todo] >= lo) & (pts[todo] <= hi), axis=1)
        todo = todo[inside]
        if todo.size == 0:
            continue
        s = np.linspace(0.0, 1.0, n_seed + 1)
        seed_x = surf.evaluate_grid(s, s).reshape(-1, 2)
        uu, vv = np.meshgrid(s, s, indexing="ij")
        d2 = ((pts[todo, None, :] - seed_x[None]) ** 2).sum(-1)
        j = np.argmin(d2, axis=1)
        u = uu.ravel()[j]
        v = vv.ravel()[j]
        target = pts[todo]
        conv = np.zeros(todo.size, dtype=bool)
        for _ in range(max_iter):
            x, J = surf.evaluate(u, v, jacobian=True)
            r = target - x
            conv = np.linalg.norm(r, axis=1) <= tol * scale
            if conv.all():
                break
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            det = np.where(np.abs(det) > 1e-300, det, 1e-300)
            du = (J[:, 1, 1] * r[:, 0] - J[:, 0, 1] * r[:, 1]) / det
            dv = (-J[:, 1, 0] * r[:, 0] + J[:, 0, 0] * r[:, 1]) / det
            u = np.clip(u + du, 0.0, 1.0)
            v = np.clip(v + dv, 0.0, 1.0)
        x = surf.evaluate(u, v)
        conv = np.linalg.norm(target - x, axis=1) <= max(tol * scale, 1e-13) * 1e3
        hit = todo[conv]
        out_p[hit] = k
        out_u[hit] = u[conv]
        out_v[hit] = v[conv]
    return out_p, out_u, out_v


@dataclass
class RegionOfInterest:
    rects: tuple
    tp_points: np.ndarray      # (N_U, 2) physical sample points near the triple point
    tp_patch: np.ndarray
    tp_uv: np.ndarray


def triple_point_samples(model):
    """N_U points on a small arc around the triple point, inside the vacuum wedge.

    The wedge is bounded by the insulator surface (straight down from the
    triple point) and the electrode surface leaving the triple point.
    Models without a design curve are sampled on the full circle.
    """
    reg = model.region
    dm = model.design
    tp = np.asarray(model.triple_point, dtype=float)
    if dm is None:
        th = 2 * np.pi * (np.arange(reg.tp_count) + 0.5) / reg.tp_count
        return tp + reg.tp_radius * np.column_stack([np.cos(th), np.sin(th)])
    curve = model.side_curve(dm.patch, dm.side)
    t_end = 1.0 if np.allclose(curve.points[-1], tp) else 0.0
    tan = curve.derivative(t_end)
    away = -tan if t_end == 1.0 else tan
    a0 = -0.5 * np.pi
    a1 = np.arctan2(away[1], away[0])
    while a1 <= a0:
        a1 += 2 * np.pi
    th = a0 + (np.arange(reg.tp_count) + 0.5) / reg.tp_count * (a1 - a0)
    return tp + reg.tp_radius * np.column_stack([np.cos(th), np.sin(th)])


def region_of_interest(model):
    reg = model.region
    if reg is None:
        raise GeometryError("model has no region of interest")
    if model.triple_point is not None and reg.tp_count > 0:
        pts = triple_point_samples(model)
        vac = [k for k, p in enumerate(model.patches) if p.material == VACUUM]
        pk, u, v = locate(model, pts, patches=vac)
        ok = pk >= 0
        pts, pk, uv = pts[ok], pk[ok], np.column_stack([u, v])[ok]
    else:
        pts, pk, uv = np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2))
    return RegionOfInterest(reg.rects, pts, pk, uv)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def model_to_dict(model):
    dm = model.design
    return {
        "schema": SCHEMA_VERSION,
        "patches": [{"name": p.name, "material": p.material, "surface": p.surface.to_dict()}
                    for p in model.patches],
        "interfaces": [[i.patch_a, i.side_a, i.patch_b, i.side_b, bool(i.reversed)]
                       for i in model.interfaces],
        "tags": [[k[0], k[1], v] for k, v in sorted(model.tags.items())],
        "eps0": model.eps0,
        "eps_r_insulator": model.eps_r_insulator,
        "triple_point": None if model.triple_point is None else model.triple_point.tolist(),
        "design": None if dm is None else {
            "patch": dm.patch, "side": dm.side, "free": list(dm.free),
            "lower": dm.lower.tolist(), "upper": dm.upper.tolist(),
            "blend": None if dm.blend is None else list(dm.blend)},
        "region": None if model.region is None else {
            "rects": [list(r) for r in model.region.rects],
            "tp_radius": model.region.tp_radius, "tp_count": model.region.tp_count},
        "voltages": dict(model.voltages),
        "meta": model.meta,
    }


def model_from_dict(d):
    if d.get("schema") != SCHEMA_VERSION:
        raise GeometryError(f"unsupported geometry schema {d.get('schema')!r}")
    patches = [Patch(NurbsSurface.from_dict(p["surface"]), p["material"], p.get("name", ""))
               for p in d["patches"]]
    interfaces = [Interface(*i) for i in d["interfaces"]]
    tags = {(a, b): t for a, b, t in d["tags"]}
    dm = d.get("design")
    if dm is not None:
        dm = DesignMap(dm["patch"], dm["side"], tuple(dm["free"]), np.asarray(dm["lower"]),
                       np.asarray(dm["upper"]), dm.get("blend"))
    reg = d.get("region")
    if reg is not None:
        reg = RegionSpec(tuple(tuple(r) for r in reg["rects"]), reg["tp_radius"], reg["tp_count"])
    tp = d.get("triple_point")
    return MultiPatchModel(patches, interfaces, tags, d["eps0"], d["eps_r_insulator"],
                           triple_point=None if tp is None else np.asarray(tp), design=dm,
                           region=reg, voltages=d.get("voltages", dict(DEFAULT_VOLTAGES)),
                           meta=d.get("meta", {}))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
