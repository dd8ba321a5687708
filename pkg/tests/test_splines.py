import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gunshape import kernels, splines
from gunshape.splines import KnotVector, NurbsCurve, NurbsSurface, SplineError

from oracles import cox_de_boor_all, de_casteljau


@st.composite
def knot_vectors(draw, max_degree=5):
    p = draw(st.integers(1, max_degree))
    n_int = draw(st.integers(0, 6))
    inner = sorted(draw(st.lists(st.sampled_from([0.125 * k for k in range(1, 8)]),
                                 min_size=n_int, max_size=n_int)))
    # cap multiplicities at p so the basis stays at least C^0
    capped = []
    for x in inner:
        if capped.count(x) < p:
            capped.append(x)
    return KnotVector(np.r_[np.zeros(p + 1), capped, np.ones(p + 1)], p)


@st.composite
def curves(draw, rational=False):
    kv = draw(knot_vectors())
    n = kv.num_basis
    pts = np.array(draw(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
                                 min_size=n, max_size=n)))
    w = None
    if rational:
        w = np.array(draw(st.lists(st.floats(0.3, 3.0), min_size=n, max_size=n)))
    return NurbsCurve(kv, pts, w)


def full_basis(kv, x, nder=0, left=False):
    b = splines.eval_basis(kv, x, nder, left)
    out = np.zeros((nder + 1, kv.num_basis))
    rows = np.vstack([b.values[None, :], b.derivatives]) if nder else b.values[None, :]
    out[:, b.span - kv.degree: b.span + 1] = rows
    return out


# --- basis -----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(knot_vectors(), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_partition_of_unity(kv, xs):
    M = splines.basis_matrix(kv, np.array(xs))
    assert np.all(M >= -1e-14)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(knot_vectors(max_degree=4), st.floats(0, 1))
def test_basis_matches_recursive_definition(kv, x):
    np.testing.assert_allclose(splines.basis_matrix(kv, [x])[0],
                               cox_de_boor_all(kv.knots, kv.degree, x), atol=1e-12)


def test_basis_derivative_against_finite_differences():
    kv = KnotVector.open_uniform(4, 5, 2)
    xs = np.linspace(0.03, 0.97, 23)
    h = 1e-6
    d = splines.basis_matrix(kv, xs, 1)
    fd = (splines.basis_matrix(kv, xs + h) - splines.basis_matrix(kv, xs - h)) / (2 * h)
    np.testing.assert_allclose(d, fd, atol=1e-6)


@pytest.mark.parametrize("p,mult", [(3, 1), (3, 2), (3, 3), (4, 2), (7, 1)])
def test_continuity_at_knot(p, mult):
    kv = KnotVector(np.r_[np.zeros(p + 1), [0.5] * mult, np.ones(p + 1)], p)
    reg = p - mult
    left = full_basis(kv, 0.5, p, left=True)
    right = full_basis(kv, 0.5, p, left=False)
    scale = np.abs(right).max(axis=1)
    for k in range(reg + 1):
        np.testing.assert_allclose(left[k], right[k], atol=1e-9 * scale[k])
    # the first discontinuous derivative really jumps
    assert np.abs(left[reg + 1] - right[reg + 1]).max() > 1e-3 * scale[reg + 1]


def test_left_limit_spans():
    kv = KnotVector.open_uniform(2, 4)
    assert splines.find_span(kv, 0.5) == 4
    assert splines.find_span(kv, 0.5, left=True) == 3
    assert splines.find_span(kv, 1.0) == kv.num_basis - 1


def test_open_uniform_regularity():
    kv = KnotVector.open_uniform(3, 4, regularity=1)
    assert kv.multiplicity(0.25) == 2
    assert kv.n_elements == 4
    assert kv.num_basis == 4 + 3 * 2 + 1 - 1


@pytest.mark.parametrize("knots,p", [
    ([0, 0, 1], 1),                 # too short
    ([0, 0, 0.6, 0.4, 1, 1], 1),    # decreasing
    ([0, 0.1, 1, 1], 1),            # not open
    ([0, 0, 2, 2], 1),              # outside [0, 1]
])
def test_knot_vector_validation(knots, p):
    with pytest.raises(SplineError):
        KnotVector(knots, p)


def test_parameter_validation():
    kv = KnotVector.open_uniform(2, 2)
    with pytest.raises(SplineError):
        splines.basis_matrix(kv, [1.5])
    with pytest.raises(SplineError):
        splines.eval_basis(kv, 0.3, 3)


# --- curves ----------------------------------------------------------------

def test_bezier_matches_de_casteljau(rng):
    pts = rng.standard_normal((8, 2))
    c = NurbsCurve(KnotVector(np.r_[np.zeros(8), np.ones(8)], 7), pts)
    for t in np.linspace(0, 1, 11):
        np.testing.assert_allclose(c.evaluate(t), de_casteljau(pts, t), atol=1e-13)


def test_circle_is_exact():
    c = splines.circle(0.3, (1.0, -2.0))
    t = np.random.default_rng(0).random(100)
    r = np.linalg.norm(c.evaluate(t) - [1.0, -2.0], axis=1)
    np.testing.assert_allclose(r, 0.3, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(curves(rational=True), st.floats(0.01, 0.99))
def test_knot_insertion_keeps_the_curve(c, x):
    if c.kv.multiplicity(x) >= c.degree:
        return
    c2 = splines.insert_knot(c, x)
    t = np.random.default_rng(1).random(100)
    np.testing.assert_allclose(c2.evaluate(t), c.evaluate(t), atol=1e-12)
    assert c2.kv.num_basis == c.kv.num_basis + 1


@settings(max_examples=30, deadline=None)
@given(curves(rational=True), st.integers(1, 3))
def test_degree_elevation_keeps_the_curve(c, t):
    c2 = splines.elevate_degree(c, t)
    xs = np.random.default_rng(2).random(100)
    np.testing.assert_allclose(c2.evaluate(xs), c.evaluate(xs), atol=1e-12)
    assert c2.degree == c.degree + t
    # continuity is preserved: interior multiplicities grow by t
    for x in np.unique(c.kv.interior_knots()):
        assert c2.kv.multiplicity(x) == c.kv.multiplicity(x) + t


def test_circle_refinement_stays_exact():
    c = splines.elevate_degree(splines.insert_knot(splines.circle(), 0.1), 2)
    t = np.random.default_rng(3).random(100)
    np.testing.assert_allclose(np.linalg.norm(c.evaluate(t), axis=1), 1.0, atol=1e-12)


def test_curve_derivative_against_finite_differences():
    c = splines.circle(2.0)
    t = np.linspace(0.05, 0.95, 17)
    h = 1e-6
    fd = (c.evaluate(t + h) - c.evaluate(t - h)) / (2 * h)
    np.testing.assert_allclose(c.derivative(t), fd, rtol=1e-6, atol=1e-5)


def test_reversed_curve():
    c = splines.circle()
    r = c.reversed()
    t = np.linspace(0, 1, 9)
    np.testing.assert_allclose(r.evaluate(t), c.evaluate(1 - t), atol=1e-14)


def test_curve_dict_round_trip():
    c = splines.circle(1.5)
    c2 = NurbsCurve.from_dict(c.to_dict())
    assert c2.kv == c.kv
    np.testing.assert_array_equal(c2.points, c.points)
    np.testing.assert_array_equal(c2.weights, c.weights)


def test_curve_validation():
    kv = KnotVector.open_uniform(2, 1)
    with pytest.raises(SplineError):
        NurbsCurve(kv, np.zeros((4, 2)))
    with pytest.raises(SplineError):
        NurbsCurve(kv, np.zeros((3, 2)), np.array([1.0, -1.0, 1.0]))


# --- fitting ---------------------------------------------------------------

def test_fit_reproduces_a_curve_in_the_space(rng):
    kv = KnotVector.open_uniform(3, 4)
    c = NurbsCurve(kv, rng.standard_normal((kv.num_basis, 2)))
    u = np.linspace(0, 1, 60)
    fit = splines.least_squares_fit(u, c.evaluate(u), kv)
    np.testing.assert_allclose(fit.points, c.points, atol=1e-10)
    assert splines.fit_residual(fit, u, c.evaluate(u)) < 1e-20


def test_fit_keeps_end_points_and_pins():
    u = np.linspace(0, 1, 40)
    pts = np.column_stack([np.cos(u), np.sin(3 * u)])
    kv = KnotVector(np.r_[np.zeros(6), np.ones(6)], 5)
    fit = splines.least_squares_fit(u, pts, kv, fixed={(1, 1): 0.25})
    np.testing.assert_array_equal(fit.points[0], pts[0])
    np.testing.assert_array_equal(fit.points[-1], pts[-1])
    assert fit.points[1, 1] == 0.25


def test_fit_rejects_too_few_samples():
    kv = KnotVector(np.r_[np.zeros(8), np.ones(8)], 7)
    u = np.linspace(0, 1, 4)
    with pytest.raises(SplineError):
        splines.least_squares_fit(u, np.zeros((4, 2)), kv)


def test_chord_length_parameters():
    u = splines.chord_length_params([[0, 0], [1, 0], [1, 3]])
    np.testing.assert_allclose(u, [0, 0.25, 1])


# --- surfaces --------------------------------------------------------------

def _annulus_sector():
    c_in = splines.circle(1.0)
    c_out = splines.circle(2.0)
    return NurbsSurface.ruled(c_in, c_out)


def test_ruled_surface_and_boundaries():
    s = _annulus_sector()
    u = np.linspace(0, 1, 13)
    x = s.evaluate(u, np.zeros_like(u))
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(s.boundary(3).evaluate(u), s.evaluate(u, np.ones_like(u)),
                               atol=1e-14)
    np.testing.assert_allclose(s.boundary(0).evaluate([0.5])[0], [1.5, 0.0], atol=1e-14)


def test_surface_jacobian_against_finite_differences():
    s = _annulus_sector()
    u = np.array([0.1, 0.37, 0.8])
    v = np.array([0.2, 0.5, 0.9])
    _, J = s.evaluate(u, v, jacobian=True)
    h = 1e-6
    du = (s.evaluate(u + h, v) - s.evaluate(u - h, v)) / (2 * h)
    dv = (s.evaluate(u, v + h) - s.evaluate(u, v - h)) / (2 * h)
    np.testing.assert_allclose(J[..., 0], du, atol=1e-6)
    np.testing.assert_allclose(J[..., 1], dv, atol=1e-6)


@pytest.mark.parametrize("direction", [0, 1])
def test_surface_refinement_keeps_the_map(direction):
    s = _annulus_sector()
    rng = np.random.default_rng(4)
    u, v = rng.random(100), rng.random(100)
    x = s.evaluate(u, v)
    np.testing.assert_allclose(s.insert_knot(0.3, direction).evaluate(u, v), x, atol=1e-12)
    np.testing.assert_allclose(s.elevate_degree(2, direction).evaluate(u, v), x, atol=1e-12)


def test_surface_dict_round_trip():
    s = _annulus_sector()
    s2 = NurbsSurface.from_dict(s.to_dict())
    u = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(s2.evaluate(u, u), s.evaluate(u, u))


# --- backends --------------------------------------------------------------

def test_backends_agree_on_basis(rng):
    from gunshape import _kernels_py
    if not kernels.compiled_available():
        pytest.skip("compiled extension not built")
    from gunshape import _kernels
    kv = KnotVector.open_uniform(4, 7, 1)
    xs = np.r_[rng.random(200), 0.0, 1.0, kv.breaks]
    for left in (False, True):
        s1, d1 = _kernels_py.basis_ders(kv.knots, 4, xs, 3, left)
        s2, d2 = _kernels.basis_ders(kv.knots, 4, xs, 3, left)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_allclose(d1, d2, rtol=1e-13, atol=1e-12)
