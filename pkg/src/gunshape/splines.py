"""B-spline and NURBS curves and surfaces in the (rho, z) half plane.

Curves and surfaces are immutable; refinement returns new objects. Rational
objects are handled in homogeneous coordinates ``(w*rho, w*z, w)`` so that
knot insertion and degree elevation act linearly on the control net.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels


class SplineError(ValueError):
    """Invalid knot vector, parameter or refinement request."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# knot vectors and basis functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KnotVector:
    knots: np.ndarray
    degree: int

    def __post_init__(self):
        kn = _frozen(self.knots)
        p = int(self.degree)
        object.__setattr__(self, "knots", kn)
        object.__setattr__(self, "degree", p)
        if p < 0:
            raise SplineError("degree must be non-negative")
        if kn.ndim != 1 or kn.size < 2 * (p + 1):
            raise SplineError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(kn) < 0):
            raise SplineError("knots must be non-decreasing")
        if kn[0] < 0.0 or kn[-1] > 1.0:
            raise SplineError("knots must lie in [0, 1]")
        if np.any(kn[: p + 1] != kn[0]) or np.any(kn[-(p + 1):] != kn[-1]):
            raise SplineError("knot vector is not open")
        if kn[0] == kn[-1]:
            raise SplineError("knot vector has empty parameter range")

    @classmethod
    def open_uniform(cls, degree, n_elements=1, regularity=None):
        """Open knot vector on [0, 1] with equal elements.

        ``regularity`` is the continuity across interior knots (default
        ``degree - 1``); interior knots get multiplicity ``degree - regularity``.
        """
        if regularity is None:
            regularity = degree - 1
        if not -1 <= regularity <= degree - 1:
            raise SplineError("regularity must lie in [-1, degree-1]")
        if n_elements < 1:
            raise SplineError("need at least one element")
        mult = degree - regularity
        inner = np.repeat(np.arange(1, n_elements) / n_elements, mult)
        return cls(np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)]), degree)

    @property
    def num_basis(self):
        return self.knots.size - self.degree - 1

    @property
    def breaks(self):
        return np.unique(self.knots)

    @property
    def n_elements(self):
        return self.breaks.size - 1

    def multiplicity(self, x):
        return int(np.count_nonzero(self.knots == x))

    def interior_knots(self):
        p = self.degree
        return self.knots[p + 1: self.knots.size - p - 1]

    def greville(self):
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        n = self.num_basis
        return np.array([self.knots[i + 1: i + p + 1].mean() for i in range(n)])

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def to_dict(self):
        return {"degree": self.degree, "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["knots"], dtype=float), int(d["degree"]))


@dataclass(frozen=True)
class BasisSpan:
    span: int
    values: np.ndarray
    derivatives: np.ndarray  # shape (n_derivs, p+1), may be empty


def _check_params(xs):
    xs = np.asarray(xs, dtype=float)
    if np.any(~np.isfinite(xs)) or np.any(xs < 0.0) or np.any(xs > 1.0):
        raise SplineError("parameter outside [0, 1]")
    return xs


def find_span(kv, xi, left=False):
    """Index ``i`` with ``knots[i] <= xi < knots[i+1]``.

    ``xi = 1`` maps to the last non-empty interval. With ``left=True`` the
    half-open convention is flipped (``knots[i] < xi <= knots[i+1]``), which
    gives one-sided limits from the left at interior knots.
    """
    xi = _check_params(xi)
    return int(kernels.find_spans(kv.knots, kv.degree, np.atleast_1d(xi), left)[0])


def eval_basis(kv, xi, n_derivs=0, left=False):
    if n_derivs > kv.degree:
        raise SplineError("n_derivs exceeds the degree")
    xi = _check_params(xi)
    spans, ders = kernels.basis_ders(kv.knots, kv.degree, np.atleast_1d(xi), n_derivs, left)
    return BasisSpan(int(spans[0]), ders[0, 0].copy(), ders[0, 1:].copy())


def basis_matrix(kv, xs, n_deriv=0):
    """Dense collocation matrix of the ``n_deriv``-th derivative at ``xs``."""
    xs = _check_params(np.atleast_1d(xs))
    spans, ders = kernels.basis_ders(kv.knots, kv.degree, xs, n_deriv)
    p = kv.degree
    M = np.zeros((xs.size, kv.num_basis))
    rows = np.repeat(np.arange(xs.size), p + 1)
    cols = (spans[:, None] - p + np.arange(p + 1)).ravel()
    M[rows, cols] = ders[:, n_deriv, :].ravel()
    return M


# ---------------------------------------------------------------------------
# linear refinement operators on coefficient arrays (axis 0 = basis index)
# ---------------------------------------------------------------------------

def _insert_coeffs(kv, coeffs, xibar):
    if not 0.0 < xibar < 1.0:
        raise SplineError("can only insert interior knots (0 < xi < 1)")
    p = kv.degree
    s = kv.multiplicity(xibar)
    if s + 1 > p:
        raise SplineError(f"multiplicity of {xibar} would exceed degree {p}")
    U = kv.knots
    k = int(kernels.find_spans(U, p, np.array([xibar]))[0])
    n = kv.num_basis
    Q = np.empty((n + 1,) + coeffs.shape[1:])
    Q[: k - p + 1] = coeffs[: k - p + 1]
    Q[k - s + 1:] = coeffs[k - s:]
    for i in range(k - p + 1, k - s + 1):
        alpha = (xibar - U[i]) / (U[i + p] - U[i])
        Q[i] = alpha * coeffs[i] + (1.0 - alpha) * coeffs[i - 1]
    new = KnotVector(np.insert(U, k + 1, xibar), p)
    return new, Q


def _elevate_coeffs(kv, coeffs, t):
    if int(t) != t or t < 1:
        raise SplineError("elevation step t must be an integer >= 1")
    t = int(t)
    p = kv.degree
    vals, counts = np.unique(kv.knots, return_counts=True)
    new = KnotVector(np.repeat(vals, counts + t), p + t)
    # the elevated space contains the old one; collocate at the new Greville points
    g = np.clip(new.greville(), 0.0, 1.0)
    A_old = basis_matrix(kv, g)
    A_new = basis_matrix(new, g)
    rhs = A_old @ coeffs.reshape(coeffs.shape[0], -1)
    Q = np.linalg.solve(A_new, rhs)
    return new, Q.reshape((new.num_basis,) + coeffs.shape[1:])


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NurbsCurve:
    kv: KnotVector
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = _frozen(self.points)
        w = np.ones(pts.shape[0]) if self.weights is None else self.weights
        w = _frozen(w)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise SplineError("control points must be an (n, 2) array")
        if pts.shape[0] != self.kv.num_basis:
            raise SplineError(
                f"{pts.shape[0]} control points but knot vector needs {self.kv.num_basis}")
        if w.shape != (pts.shape[0],) or np.any(w <= 0.0):
            raise SplineError("weights must be positive, one per control point")

    @property
    def degree(self):
        return self.kv.degree

    @property
    def is_rational(self):
        return bool(np.any(self.weights != self.weights[0]))

    @property
    def homogeneous(self):
        return np.column_stack([self.points * self.weights[:, None], self.weights])

    @classmethod
    def from_homogeneous(cls, kv, pw):
        return cls(kv, pw[:, :2] / pw[:, 2:3], pw[:, 2])

    @classmethod
    def line(cls, p0, p1):
        return cls(KnotVector([0.0, 0.0, 1.0, 1.0], 1), np.array([p0, p1], dtype=float))

    def evaluate(self, xi, derivs=0):
        """Points (and optionally the first derivative) at parameters ``xi``."""
        xi_arr = _check_params(xi)
        xs = np.atleast_1d(xi_arr).ravel()
        p = self.degree
        spans, ders = kernels.basis_ders(self.kv.knots, p, xs, min(derivs, p))
        idx = spans[:, None] - p + np.arange(p + 1)
        pw = self.homogeneous[idx]
        A = np.einsum("kj,kjc->kc", ders[:, 0], pw)
        pt = A[:, :2] / A[:, 2:3]
        if derivs == 0:
            return pt.reshape(np.shape(xi_arr) + (2,))
        if p == 0:
            d = np.zeros_like(pt)
        else:
            dA = np.einsum("kj,kjc->kc", ders[:, 1], pw)
            d = (dA[:, :2] - dA[:, 2:3] * pt) / A[:, 2:3]
        shape = np.shape(xi_arr) + (2,)
        return pt.reshape(shape), d.reshape(shape)

    __call__ = evaluate

    def derivative(self, xi):
        return self.evaluate(xi, derivs=1)[1]

    def reversed(self):
        kn = 1.0 - self.kv.knots[::-1]
        return NurbsCurve(KnotVector(kn, self.degree), self.points[::-1], self.weights[::-1])

    def to_dict(self):
        return {"kv": self.kv.to_dict(), "points": self.points.tolist(),
                "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(KnotVector.from_dict(d["kv"]), np.asarray(d["points"], dtype=float),
                   np.asarray(d["weights"], dtype=float))


def eval_curve(c, xi):
    return c.evaluate(xi)


def eval_curve_deriv(c, xi):
    return c.derivative(xi)


def insert_knot(c, xibar):
    """Insert ``xibar`` once; the mapped curve is unchanged."""
    kv, pw = _insert_coeffs(c.kv, c.homogeneous, float(xibar))
    return NurbsCurve.from_homogeneous(kv, pw)


def elevate_degree(c, t=1):
    """Raise the degree by ``t``, every knot multiplicity by ``t``."""
    kv, pw = _elevate_coeffs(c.kv, c.homogeneous, t)
    return NurbsCurve.from_homogeneous(kv, pw)


def circle(radius=1.0, center=(0.0, 0.0)):
    """Full circle as the standard 9-point quadratic NURBS."""
    s = np.sqrt(0.5)
    pts = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1], [1, 0]],
                   dtype=float) * radius + np.asarray(center, dtype=float)
    w = np.array([1, s, 1, s, 1, s, 1, s, 1])
    kn = [0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1, 1, 1]
    return NurbsCurve(KnotVector(kn, 2), pts, w)


def chord_length_params(points):
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        raise SplineError("degenerate sample polyline")
    return s / s[-1]


def least_squares_fit(params, points, kv, fix_endpoints=True, fixed=None):
    """Polynomial B-spline minimizing the summed squared point distance.

    With ``fix_endpoints`` the first and last control points are pinned to the
    first and last samples and eliminated from the normal equations.
    ``fixed`` maps ``(index, coordinate)`` to a prescribed control value, e.g.
    ``{(1, 1): 0.0}`` pins the second control point's second coordinate; the
    coordinates decouple, so each is solved on its own free set.
    """
    params = _check_params(params)
    points = np.asarray(points, dtype=float)
    if np.any(np.diff(params) < 0):
        raise SplineError("fit parameters must be non-decreasing")
    A = basis_matrix(kv, params)
    n = kv.num_basis
    dim = points.shape[1]
    pinned = [dict() for _ in range(dim)]
    if fix_endpoints:
        if n < 2:
            raise SplineError("need at least two control points")
        for k in range(dim):
            pinned[k][0] = points[0, k]
            pinned[k][n - 1] = points[-1, k]
    for (i, k), val in (fixed or {}).items():
        if not (0 <= i < n and 0 <= k < dim):
            raise SplineError(f"fixed entry ({i}, {k}) out of range")
        pinned[k][i] = float(val)
    P = np.empty((n, dim))
    for k in range(dim):
        idx = sorted(pinned[k])
        free = [i for i in range(n) if i not in pinned[k]]
        P[idx, k] = [pinned[k][i] for i in idx]
        rhs = points[:, k] - A[:, idx] @ P[idx, k]
        Af = A[:, free]
        if free:
            if Af.shape[0] < Af.shape[1] or np.linalg.matrix_rank(Af) < Af.shape[1]:
                raise SplineError("rank-deficient fit (too few or degenerate samples)")
            P[free, k] = np.linalg.lstsq(Af, rhs, rcond=None)[0]
    return NurbsCurve(kv, P)


def fit_residual(c, params, points):
    """Sum of squared distances between the curve and the samples."""
    d = c.evaluate(np.asarray(params, dtype=float)) - np.asarray(points, dtype=float)
    return float(np.sum(d * d))


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------

# side numbering: 0 -> u=0, 1 -> u=1, 2 -> v=0, 3 -> v=1
SIDES = (0, 1, 2, 3)


@dataclass(frozen=True, eq=False)
class NurbsSurface:
    kv_u: KnotVector
    kv_v: KnotVector
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = _frozen(self.points)
        w = np.ones(pts.shape[:2]) if self.weights is None else self.weights
        w = _frozen(w)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape != (self.kv_u.num_basis, self.kv_v.num_basis, 2):
            raise SplineError("control net shape does not match the knot vectors")
        if w.shape != pts.shape[:2] or np.any(w <= 0.0):
            raise SplineError("weights must be positive, one per control point")

    @property
    def degrees(self):
        return self.kv_u.degree, self.kv_v.degree

    @property
    def homogeneous(self):
        return np.concatenate([self.points * self.weights[..., None], self.weights[..., None]],
                              axis=-1)

    @classmethod
    def from_homogeneous(cls, kv_u, kv_v, pw):
        return cls(kv_u, kv_v, pw[..., :2] / pw[..., 2:3], pw[..., 2])

    @classmethod
    def ruled(cls, c0, c1):
        """Degree-1 blend between two curves sharing a knot vector (v direction)."""
        if c0.kv != c1.kv:
            raise SplineError("ruled surface needs curves on the same knot vector")
        pts = np.stack([c0.points, c1.points], axis=1)
        w = np.stack([c0.weights, c1.weights], axis=1)
        return cls(c0.kv, KnotVector([0.0, 0.0, 1.0, 1.0], 1), pts, w)

    def _homog_and_derivs(self, su, Bu, sv, Bv):
        p, q = self.degrees
        pw = self.homogeneous
        iu = su[:, None] - p + np.arange(p + 1)
        iv = sv[:, None] - q + np.arange(q + 1)
        loc = pw[iu[:, :, None], iv[:, None, :]]  # (n, p+1, q+1, 3)
        A = np.einsum("ki,kj,kijc->kc", Bu[:, 0], Bv[:, 0], loc)
        Au = np.einsum("ki,kj,kijc->kc", Bu[:, 1], Bv[:, 0], loc) if p > 0 else np.zeros_like(A)
        Av = np.einsum("ki,kj,kijc->kc", Bu[:, 0], Bv[:, 1], loc) if q > 0 else np.zeros_like(A)
        return A, Au, Av

    def evaluate(self, xi, eta, jacobian=False, left=(False, False)):
        """Evaluate at paired parameter arrays.

        Returns points ``(..., 2)``; with ``jacobian`` also ``J`` of shape
        ``(..., 2, 2)`` with ``J[..., a, b] = d x_a / d u_b``.
        """
        xi = _check_params(xi)
        eta = _check_params(eta)
        xi, eta = np.broadcast_arrays(xi, eta)
        shape = xi.shape
        u = xi.ravel()
        v = eta.ravel()
        p, q = self.degrees
        su, Bu = kernels.basis_ders(self.kv_u.knots, p, u, 1, left[0])
        sv, Bv = kernels.basis_ders(self.kv_v.knots, q, v, 1, left[1])
        A, Au, Av = self._homog_and_derivs(su, Bu, sv, Bv)
        w = A[:, 2:3]
        x = A[:, :2] / w
        if not jacobian:
            return x.reshape(shape + (2,))
        xu = (Au[:, :2] - Au[:, 2:3] * x) / w
        xv = (Av[:, :2] - Av[:, 2:3] * x) / w
        J = np.stack([xu, xv], axis=-1)
        return x.reshape(shape + (2,)), J.reshape(shape + (2, 2))

    __call__ = evaluate

    def evaluate_grid(self, us, vs, jacobian=False):
        """Evaluate on the tensor grid ``us x vs``; arrays shaped (nu, nv, ...)."""
        U, V = np.meshgrid(np.asarray(us, float), np.asarray(vs, float), indexing="ij")
        return self.evaluate(U, V, jacobian=jacobian)

    def boundary(self, side):
        """Boundary curve on ``side``; sides 0/1 run along v, 2/3 along u."""
        if side == 0:
            return NurbsCurve(self.kv_v, self.points[0], self.weights[0])
        if side == 1:
            return NurbsCurve(self.kv_v, self.points[-1], self.weights[-1])
        if side == 2:
            return NurbsCurve(self.kv_u, self.points[:, 0], self.weights[:, 0])
        if side == 3:
            return NurbsCurve(self.kv_u, self.points[:, -1], self.weights[:, -1])
        raise SplineError(f"unknown side {side}")

    def insert_knot(self, xibar, direction=0):
        pw = self.homogeneous
        if direction == 0:
            kv, q = _insert_coeffs(self.kv_u, pw, float(xibar))
            return NurbsSurface.from_homogeneous(kv, self.kv_v, q)
        kv, q = _insert_coeffs(self.kv_v, np.swapaxes(pw, 0, 1), float(xibar))
        return NurbsSurface.from_homogeneous(self.kv_u, kv, np.swapaxes(q, 0, 1))

    def elevate_degree(self, t=1, direction=0):
        pw = self.homogeneous
        if direction == 0:
            kv, q = _elevate_coeffs(self.kv_u, pw, t)
            return NurbsSurface.from_homogeneous(kv, self.kv_v, q)
        kv, q = _elevate_coeffs(self.kv_v, np.swapaxes(pw, 0, 1), t)
        return NurbsSurface.from_homogeneous(self.kv_u, kv, np.swapaxes(q, 0, 1))

    def with_points(self, points):
        return NurbsSurface(self.kv_u, self.kv_v, points, self.weights)

    def to_dict(self):
        return {"kv_u": self.kv_u.to_dict(), "kv_v": self.kv_v.to_dict(),
                "points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(KnotVector.from_dict(d["kv_u"]), KnotVector.from_dict(d["kv_v"]),
                   np.asarray(d["points"], dtype=float), np.asarray(d["weights"], dtype=float))


def eval_surface(s, xi, eta, jacobian=False):
    return s.evaluate(xi, eta, jacobian=jacobian)
