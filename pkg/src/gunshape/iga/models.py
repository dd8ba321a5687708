"""Small models with closed-form electrostatic solutions, used as oracles."""
import numpy as np

from ..geometry import EPS0, Interface, MultiPatchModel, Patch, RegionSpec
from ..splines import KnotVector, NurbsSurface


def spherical_capacitor_model(a=0.05, b=0.10, v_inner=-300e3, v_outer=0.0, grading=0.2):
    """Half annulus a <= r <= b in the (rho, z) half plane, as two patches.

    The radial direction is quadratic with its middle control radius at
    ``a + grading (b - a)``, which clusters elements towards the inner
    sphere; ``grading=0.5`` gives the uniform map.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    if not 0 < grading < 1:
        raise ValueError("grading must lie in (0, 1)")
    radii = np.array([a, a + grading * (b - a), b])
    kv_r = KnotVector([0, 0, 0, 1, 1, 1], 2)
    kv_t = KnotVector([0, 0, 0, 1, 1, 1], 2)
    s = np.sqrt(0.5)

    def quarter(th0):
        # unit quarter arc from angle th0 to th0 + pi/2 as a rational quadratic
        c0 = np.array([np.cos(th0), np.sin(th0)])
        c2 = np.array([np.cos(th0 + np.pi / 2), np.sin(th0 + np.pi / 2)])
        c1 = c0 + c2
        arc = np.stack([c0, c1, c2])
        pts = radii[:, None, None] * arc[None, :, :]
        w = np.tile([1.0, s, 1.0], (3, 1))
        return NurbsSurface(kv_r, kv_t, pts, w)

    upper = Patch(quarter(0.0), name="upper")
    lower = Patch(quarter(-np.pi / 2), name="lower")
    tags = {(0, 0): "gamma_d1", (0, 1): "gamma_d0", (0, 3): "axis",
            (1, 0): "gamma_d1", (1, 1): "gamma_d0", (1, 2): "axis"}
    region = RegionSpec(((0, 0.0, 1.0, 0.0, 1.0), (1, 0.0, 1.0, 0.0, 1.0)), 1e-3, 0)
    return MultiPatchModel((upper, lower), (Interface(0, 2, 1, 3),), tags, EPS0,
                           triple_point=None, region=region,
                           voltages={"gamma_d0": v_outer, "gamma_d1": v_inner, "gamma_d2": 0.0},
                           meta={"kind": "spherical_capacitor", "a": a, "b": b})


def sphere_potential(r, a, b, v_inner, v_outer=0.0):
    return v_outer + (v_inner - v_outer) * (1.0 / r - 1.0 / b) / (1.0 / a - 1.0 / b)


def sphere_field(r, a, b, v_inner, v_outer=0.0):
    """Radial field magnitude |E(r)| between the spheres."""
    return abs(v_inner - v_outer) / (r * r * (1.0 / a - 1.0 / b))


def parallel_plate_model(gap=0.08, radius=0.05, v_low=-300e3, v_high=0.0):
    """Disc electrodes at z=0 (``v_low``) and z=gap (``v_high``); open rim.

    The rim at rho = radius is a natural boundary, so the exact solution is
    linear in z and lies in every spline space.
    """
    lin = KnotVector([0, 0, 1, 1], 1)
    pts = np.array([[[0.0, 0.0], [0.0, gap]], [[radius, 0.0], [radius, gap]]])
    tags = {(0, 0): "axis", (0, 1): "natural", (0, 2): "gamma_d1", (0, 3): "gamma_d0"}
    region = RegionSpec(((0, 0.0, 1.0, 0.0, 1.0),), 1e-3, 8)
    return MultiPatchModel((Patch(NurbsSurface(lin, lin, pts), name="gap"),), (), tags, EPS0,
                           triple_point=np.array([0.5 * radius, 0.5 * gap]), region=region,
                           voltages={"gamma_d0": v_high, "gamma_d1": v_low, "gamma_d2": 0.0},
                           meta={"kind": "parallel_plate", "gap": gap, "radius": radius})
