import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gunshape import geometry as geo
from gunshape import splines
from gunshape.splines import KnotVector, NurbsCurve

from oracles import revolved_polygon_volume

# regression value for the default benchmark (cm^3)
FLAT_VOLUME_CM3 = 631.2374


def half_circle(r):
    s = math.sqrt(0.5)
    pts = np.array([[0, -r], [r, -r], [r, 0], [r, r], [0, r]], dtype=float)
    return NurbsCurve(KnotVector([0, 0, 0, 0.5, 0.5, 1, 1, 1], 2), pts, [1, s, 1, s, 1])


def polyline(pts):
    lin = KnotVector([0, 0, 1, 1], 1)
    return [NurbsCurve(lin, np.array([a, b], dtype=float))
            for a, b in zip(pts, np.roll(pts, -1, axis=0))]


# --- volumes ---------------------------------------------------------------

def test_ball_volume_is_exact():
    r = 0.07
    assert geo.revolved_volume([half_circle(r)]) == pytest.approx(4 / 3 * math.pi * r ** 3,
                                                                  rel=1e-12)


def test_torus_volume_matches_pappus():
    R, r = 0.3, 0.05
    v = geo.revolved_volume([splines.circle(r, (R, 0.1))])
    assert v == pytest.approx(2 * math.pi ** 2 * R * r * r, rel=1e-12)


def test_polygon_volume_matches_closed_form(rng):
    pts = np.array([[0.01, 0.0], [0.05, 0.01], [0.04, 0.06], [0.02, 0.04]])
    # shuffle and flip the pieces; chaining must recover the loop
    pieces = polyline(pts)
    pieces = [c.reversed() if k % 2 else c for k, c in enumerate(pieces)]
    rng.shuffle(pieces)
    assert geo.revolved_volume(pieces) == pytest.approx(revolved_polygon_volume(pts), rel=1e-13)


def test_open_loop_is_rejected():
    lin = KnotVector([0, 0, 1, 1], 1)
    with pytest.raises(geo.GeometryError):
        geo.revolved_volume([NurbsCurve(lin, [[0.1, 0], [0.2, 0]]),
                             NurbsCurve(lin, [[0.2, 0.1], [0.3, 0.1]])])


def test_gun_volume_against_polygon_oracle(gun):
    # dense polygon through the electrode boundary, independent of quadrature
    chain = geo.chain_curves(geo.electrode_curves(gun))
    t = np.linspace(0, 1, 4001)
    pts = np.vstack([c.evaluate(t)[:-1] for c in chain])
    ref = revolved_polygon_volume(pts)
    assert geo.electrode_volume(gun) == pytest.approx(ref, rel=1e-6)
    assert geo.electrode_volume(gun) * 1e6 == pytest.approx(FLAT_VOLUME_CM3, abs=1e-3)


def test_volume_scales_with_the_cube(gun):
    v = geo.electrode_volume(gun)
    assert geo.electrode_volume(geo.scale_model(gun, 1.5)) == pytest.approx(1.5 ** 3 * v,
                                                                           rel=1e-12)


# --- benchmark model -------------------------------------------------------

def test_gun_model_is_valid(gun):
    diag = geo.validate(gun)
    assert diag.ok, diag
    assert len(gun.patches) == 5
    assert [p.material for p in gun.patches].count(geo.INSULATOR) == 1
    dv = geo.design_vector(gun)
    assert dv.values.shape == (6, 2)
    assert dv.in_bounds()


def test_flat_fit_properties():
    cfg = geo.GunConfig()
    curve, (u, pts) = geo.fit_flat_design(cfg)
    np.testing.assert_array_equal(curve.points[0], pts[0])
    np.testing.assert_array_equal(curve.points[-1], pts[-1])
    assert curve.points[1, 1] == 0.0
    # one Bezier segment cannot follow the 10 mm corners exactly
    err = np.linalg.norm(curve.evaluate(u) - pts, axis=1)
    assert err.max() < 2.5e-3


def test_cathode_edge_leaves_tangentially(gun):
    curve = gun.side_curve(gun.design.patch, gun.design.side)
    d = curve.derivative(0.0)
    assert abs(d[1]) < 1e-12 * abs(d[0])


@pytest.mark.parametrize("change", [
    {"aperture_radius": 0.04},       # aperture wider than the insulator
    {"layer_grading": 1.5},
    {"corner_radius": 0.05},
    {"gap": -0.01},
])
def test_gun_config_validation(change):
    cfg = geo.GunConfig.from_dict({**geo.GunConfig().to_dict(), **change})
    with pytest.raises(geo.GeometryError):
        geo.build_gun_model(cfg)


def test_gun_config_rejects_unknown_keys():
    with pytest.raises(geo.GeometryError):
        geo.GunConfig.from_dict({"gapp": 0.1})


def test_gun_config_round_trip():
    cfg = geo.GunConfig(gap=0.09)
    assert geo.GunConfig.from_dict(cfg.to_dict()) == cfg


# --- design application ----------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12))
def test_designs_in_the_box_keep_the_model_conforming(gun, frac):
    dv = geo.design_vector(gun)
    x = dv.flat_lower + np.asarray(frac) * (dv.flat_upper - dv.flat_lower)
    m = geo.apply_design(gun, x.reshape(-1, 2), check=False)
    assert not geo.interface_mismatches(m)
    np.testing.assert_allclose(geo.design_vector(m).flat, x, atol=1e-15)
    # the far side of the cap layer does not move
    s0 = gun.patches[2].surface.boundary(3)
    s1 = m.patches[2].surface.boundary(3)
    np.testing.assert_array_equal(s0.points, s1.points)
    assert np.isfinite(geo.electrode_volume(m))


def test_identity_design_is_a_no_op(gun):
    m = geo.apply_design(gun, geo.design_vector(gun))
    for a, b in zip(gun.patches, m.patches):
        np.testing.assert_allclose(a.surface.points, b.surface.points, atol=1e-15)


def test_design_outside_box_is_rejected(gun):
    dv = geo.design_vector(gun)
    with pytest.raises(geo.DesignBoundsError):
        geo.apply_design(gun, dv.values + 1.0)


def test_folding_design_is_detected(gun):
    dm = gun.design
    wide = replace(dm, lower=dm.lower - 1.0, upper=dm.upper + 1.0)
    model = gun.with_patches(gun.patches, design=wide)
    vals = geo.design_vector(model).values.copy()
    vals[2] += [0.2, 0.3]     # drag a control point through the layer
    with pytest.raises(geo.InfeasibleGeometry):
        geo.apply_design(model, vals)


def test_design_map_validation():
    with pytest.raises(geo.GeometryError):
        geo.DesignMap(0, 2, (1, 2), np.zeros((2, 2)), -np.ones((2, 2)))
    with pytest.raises(geo.GeometryError):
        geo.DesignMap(0, 2, (1, 2), np.zeros((3, 2)), np.ones((3, 2)))


# --- refinement ------------------------------------------------------------

@pytest.mark.parametrize("insert,elevate", [((0.5,), 0), ((), 2), ((0.25, 0.5, 0.75), 1)])
def test_refinement_keeps_geometry_and_nests_the_box(gun, insert, elevate):
    rng = np.random.default_rng(7)
    dv = geo.design_vector(gun)
    x = dv.flat_lower + rng.random(dv.flat.size) * (dv.flat_upper - dv.flat_lower)
    m = geo.apply_design(gun, x.reshape(-1, 2), check=False)
    r = geo.refine_design_curve(m, insert=insert, elevate=elevate)
    u = rng.random(50)
    v = rng.random(50)
    for a, b in zip(m.patches, r.patches):
        np.testing.assert_allclose(b.surface.evaluate(u, v), a.surface.evaluate(u, v),
                                   atol=1e-12)
    assert not geo.interface_mismatches(r)
    rv = geo.design_vector(r)
    assert rv.values.shape[0] == dv.values.shape[0] + len(insert) + elevate
    assert np.all(rv.values >= rv.lower) and np.all(rv.values <= rv.upper)
    # the smooth cathode edge stays admissible only from above
    assert rv.lower[0, 1] == pytest.approx(0.0, abs=1e-15)


# --- point location, region, serialization --------------------------------

def test_locate_inverts_the_map(gun):
    rng = np.random.default_rng(3)
    for k in range(len(gun.patches)):
        u, v = 0.05 + 0.9 * rng.random(20), 0.05 + 0.9 * rng.random(20)
        x = gun.patches[k].surface.evaluate(u, v)
        pk, lu, lv = geo.locate(gun, x, patches=[k])
        assert np.all(pk == k)
        np.testing.assert_allclose(gun.patches[k].surface.evaluate(lu, lv), x, atol=1e-12)


def test_locate_misses_points_outside(gun):
    pk, _, _ = geo.locate(gun, [[1.0, 1.0], [-0.1, 0.0]])
    assert np.all(pk == -1)


def test_triple_point_samples(gun):
    roi = geo.region_of_interest(gun)
    assert roi.tp_points.shape == (gun.region.tp_count, 2)
    d = np.linalg.norm(roi.tp_points - gun.triple_point, axis=1)
    np.testing.assert_allclose(d, gun.region.tp_radius, rtol=1e-12)
    assert all(gun.patches[k].material == geo.VACUUM for k in roi.tp_patch)


def test_model_round_trip(tmp_path, gun):
    path = tmp_path / "gun.json"
    geo.save_model(gun, path)
    m = geo.load_model(path)
    assert m.tags == gun.tags and m.interfaces == gun.interfaces
    for a, b in zip(gun.patches, m.patches):
        np.testing.assert_array_equal(a.surface.points, b.surface.points)
    assert m.design.blend == gun.design.blend
    np.testing.assert_array_equal(m.design.lower, gun.design.lower)
    assert geo.electrode_volume(m) == geo.electrode_volume(gun)


def test_validate_flags_untagged_and_axis(gun):
    tags = dict(gun.tags)
    del tags[(3, 1)]
    tags[(3, 0)] = "axis"
    diag = geo.validate(gun.with_patches(gun.patches, tags=tags))
    assert (3, 1) in diag.untagged
    assert (3, 0) in diag.axis
    assert not diag.ok


def test_unknown_tag_is_rejected(gun):
    with pytest.raises(geo.GeometryError):
        gun.with_patches(gun.patches, tags={(0, 0): "anode"})
