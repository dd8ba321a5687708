"""Derivative-free trust-region method on simplex linear models.

Objective and constraints are interpolated linearly on an ``n+1`` point
simplex; the step solves the linearized problem inside an infinity-norm
trust region intersected with the box. A quasi-Newton term built from
successive model gradients adds curvature to the objective model, which
matters on curved valleys where purely linear steps zig-zag.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .core import Evaluator, OptimizeResult, OptimizerError, best_record


@dataclass
class LocalConfig:
    initial_step: float = 0.1    # trust radius, as a fraction of the box width
    min_step: float = 1e-9
    max_step: float = 0.5
    ftol_rel: float = 1e-4
    window: int = None           # evaluations; default 2n + 1
    max_evals: int = 5000
    curvature: bool = True

    def check(self):
        if self.ftol_rel <= 0 or self.initial_step <= 0 or self.min_step <= 0:
            raise OptimizerError("tolerances and steps must be positive")


class _Point:
    __slots__ = ("y", "rec", "f", "c")

    def __init__(self, y, rec):
        self.y = y
        self.rec = rec
        self.f = rec.f
        self.c = np.asarray(rec.c, dtype=float)


def _merit(f, c, mu):
    if not math.isfinite(f):
        return math.inf
    return f + mu * float(np.sum(np.maximum(c, 0.0)))


def _damped_bfgs(B, s, yv):
    """Powell-damped BFGS update; keeps B positive definite."""
    sBs = float(s @ B @ s)
    sy = float(s @ yv)
    if sBs <= 1e-300:
        return B
    theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
    r = theta * yv + (1.0 - theta) * (B @ s)
    Bs = B @ s
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)


def _solve_subproblem(g, B, c0, A, lo, hi):
    """min g.s + s'Bs/2  s.t.  c0 + A s <= t*,  lo <= s <= hi.

    ``t*`` is the least achievable linearized violation (phase 1), so the
    step is feasible for the model whenever possible.
    """
    n = g.size
    m = c0.size
    t_star = 0.0
    if m:
        # phase 1: minimize the worst linearized violation
        obj = np.r_[np.zeros(n), 1.0]
        A_ub = np.hstack([A, -np.ones((m, 1))])
        res = linprog(obj, A_ub=A_ub, b_ub=-c0,
                      bounds=list(zip(lo, hi)) + [(0.0, None)], method="highs")
        if res.status == 0:
            t_star = max(0.0, float(res.x[-1]))
        else:
            t_star = max(0.0, float(np.max(c0)))
    slack = t_star + 1e-12 * (1.0 + abs(t_star))
    quad = B is not None and np.any(B != 0.0)
    if not quad:
        A_ub = A if m else None
        b_ub = (slack - c0) if m else None
        res = linprog(g, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(lo, hi)), method="highs")
        if res.status == 0:
            return res.x
        return np.zeros(n)
    cons = []
    if m:
        cons.append({"type": "ineq", "fun": lambda s: slack - c0 - A @ s,
                     "jac": lambda s: -A})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(lambda s: g @ s + 0.5 * s @ B @ s, np.zeros(n),
                       jac=lambda s: g + B @ s, bounds=list(zip(lo, hi)),
                       constraints=cons, method="SLSQP",
                       options={"maxiter": 200, "ftol": 1e-14})
    s = np.clip(res.x, lo, hi)
    if m and np.any(c0 + A @ s > slack + 1e-9):
        # fall back to the linear step if SLSQP lost feasibility
        res = linprog(g, A_ub=A, b_ub=slack - c0, bounds=list(zip(lo, hi)), method="highs")
        s = res.x if res.status == 0 else np.zeros(n)
    return s


def local_minimize(problem, config=None, evaluator=None, stage="local", x0=None):
    """Trust-region minimization from ``x0`` (default ``problem.x0``)."""
    cfg = config or LocalConfig()
    cfg.check()
    ev = evaluator or Evaluator(problem)
    lo, hi = problem.lower, problem.upper
    width = hi - lo
    if np.any(width <= 0.0):
        raise OptimizerError("search box has zero measure")
    n = problem.dim
    window = cfg.window or 2 * n + 1
    x0 = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    if x0 is None:
        x0 = 0.5 * (lo + hi)
    trace = []

    def to_x(y):
        return np.clip(lo + np.clip(y, 0.0, 1.0) * width, lo, hi)

    def run(y):
        rec = ev(to_x(y), stage)
        trace.append(rec)
        return _Point(np.clip(y, 0.0, 1.0), rec)

    def budget():
        return cfg.max_evals - len(trace)

    delta = cfg.initial_step
    y_base = np.clip((x0 - lo) / width, 0.0, 1.0)
    base = run(y_base)
    mu = 0.0
    simplex = []
    for i in range(n):
        if budget() <= 0:
            break
        step = delta if y_base[i] + delta <= 1.0 else -delta
        y = y_base.copy()
        y[i] += step
        simplex.append(run(y))

    B = np.zeros((n, n))
    g_prev = None
    y_prev = None
    best_hist = []
    stopped = "max_evals"

    def merit(pt):
        return _merit(pt.f, pt.c, mu)

    running = [math.inf]

    def note_best():
        for rec in trace[len(best_hist):]:
            if rec.feasible:
                running[0] = min(running[0], rec.f)
            best_hist.append(running[0])

    while budget() > 0:
        pts = [base] + simplex
        # drop vertices with no finite objective (invalid designs)
        finite = [p for p in pts if math.isfinite(p.f)]
        if not finite:
            raise OptimizerError("no valid design in the initial simplex")
        base = min(finite, key=merit)
        others = [p for p in pts if p is not base]

        # termination on stalled progress
        note_best()
        if len(best_hist) > window:
            a, b = best_hist[-window - 1], best_hist[-1]
            # a window without any improvement means the radius is still
            # shrinking; only small *positive* progress counts as converged
            if math.isfinite(a) and 0.0 < a - b <= cfg.ftol_rel * abs(b):
                stopped = "ftol"
                break
        if delta < cfg.min_step:
            stopped = "min_step"
            break

        D = np.array([p.y - base.y for p in others])
        finite_rows = np.array([math.isfinite(p.f) for p in others])
        dist = np.max(np.abs(D), axis=1) if len(others) else np.zeros(0)
        sv = np.linalg.svd(D / max(delta, 1e-300), compute_uv=False) if len(others) == n \
            else np.zeros(1)
        bad_geom = (len(others) < n or not finite_rows.all() or np.any(dist > 2.5 * delta)
                    or sv[-1] < 1e-2)
        if bad_geom:
            # replace the vertex that hurts the geometry most
            if len(others) == n:
                score = dist / delta + np.where(finite_rows, 0.0, 1e3)
                j = int(np.argmax(score))
                if score[j] <= 2.5 and sv[-1] < 1e-2:
                    # degenerate but close: pick the vertex with least leverage
                    Dinv = np.linalg.pinv(D)
                    j = int(np.argmax(np.linalg.norm(Dinv, axis=0)))
                rest = np.delete(D, j, axis=0)
                if rest.shape[0]:
                    _, _, vt = np.linalg.svd(rest)
                    v = vt[-1]
                else:
                    v = np.eye(n)[0]
            else:
                j = None
                if len(others):
                    _, _, vt = np.linalg.svd(D)
                    v = vt[-1]
                else:
                    v = np.eye(n)[0]
            v = v / np.max(np.abs(v))
            cand = base.y + delta * v
            if np.any(cand < 0.0) or np.any(cand > 1.0):
                cand = base.y - delta * v
            cand = np.clip(cand, 0.0, 1.0)
            if np.max(np.abs(cand - base.y)) < 0.1 * delta:
                cand = np.clip(base.y + delta * v, 0.0, 1.0)
            newp = run(cand)
            note_best()
            if not math.isfinite(newp.f):
                # invalid design: drop the offending vertex and look closer
                if j is not None:
                    others.pop(j)
                simplex = others
                delta *= 0.5
                continue
            if j is None:
                simplex = others + [newp]
            else:
                others[j] = newp
                simplex = others
            if math.isfinite(newp.f) and merit(newp) < merit(base):
                simplex = [p for p in simplex if p is not newp] + [base]
                base = newp
            continue

        fvals = np.array([p.f for p in others]) - base.f
        grad = np.linalg.solve(D, fvals)
        m = base.c.size
        if m:
            cv = np.array([p.c for p in others]) - base.c
            A = np.linalg.solve(D, cv).T
        else:
            A = np.zeros((0, n))
        # penalty large enough for the merit to be exact near the solution
        if m:
            an = np.linalg.norm(A, axis=1)
            an = an[an > 0]
            if an.size:
                mu = max(mu, 2.0 * np.linalg.norm(grad) / an.min())

        if cfg.curvature and g_prev is not None and y_prev is not None:
            s_k = base.y - y_prev
            if np.linalg.norm(s_k) > 0:
                if not np.any(B):
                    yk = grad - g_prev
                    sy = float(s_k @ yk)
                    scale = float(yk @ yk) / sy if sy > 0 else 1.0
                    B = np.eye(n) * max(scale, 1e-8)
                B = _damped_bfgs(B, s_k, grad - g_prev)
        if not np.all(np.isfinite(B)):
            B = np.zeros((n, n))

        lo_s = np.maximum(-delta, -base.y)
        hi_s = np.minimum(delta, 1.0 - base.y)
        s = _solve_subproblem(grad, B, base.c, A, lo_s, hi_s)
        model0 = base.f + mu * float(np.sum(np.maximum(base.c, 0.0)))
        model1 = (base.f + grad @ s + 0.5 * s @ B @ s
                  + mu * float(np.sum(np.maximum(base.c + A @ s, 0.0))))
        pred = model0 - model1
        snorm = float(np.max(np.abs(s))) if s.size else 0.0
        if pred <= 0.0 or snorm < 1e-3 * delta:
            # the model sees no progress at this radius
            delta *= 0.5
            continue

        newp = run(base.y + s)
        note_best()
        actual = merit(base) - merit(newp)
        ratio = actual / pred if math.isfinite(actual) else -math.inf
        g_prev, y_prev = grad, base.y.copy()

        # put the new point into the simplex where it best preserves volume
        if math.isfinite(newp.f):
            lam = np.linalg.solve(D.T, newp.y - base.y)
            weight = np.maximum(1.0, np.max(np.abs(D), axis=1) / delta) ** 2
            if actual > 0:
                scores = np.r_[np.abs(lam) * weight, abs(1.0 - lam.sum())]
                j = int(np.argmax(scores))
                if j < n:
                    others[j] = base
                simplex = others
                base = newp
            else:
                scores = np.abs(lam) * weight
                j = int(np.argmax(scores))
                if scores[j] > 1.0:
                    others[j] = newp
                simplex = others
        else:
            simplex = others

        if ratio >= 0.75 and snorm >= 0.9 * delta:
            delta = min(2.0 * delta, cfg.max_step)
        elif ratio < 0.1:
            delta *= 0.5

    return OptimizeResult(best_record(trace), trace, len(trace), stopped)
