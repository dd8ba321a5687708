"""Acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from gunshape import cli, iga, splines
from gunshape import tracking as tr
from gunshape.optim import (GunProblem, IsresConfig, LocalConfig, Objective, Problem,
                            isres_minimize, local_minimize, stochastic_rank)
from gunshape.splines import KnotVector, NurbsCurve

from oracles import rosenbrock, sphere_field, sphere_test
from test_iga import interface_jumps, relative_l2_error


def one_sided_derivatives(curve, x, order, left):
    """Derivatives 0..order of a polynomial B-spline curve as a one-sided limit."""
    kv = curve.kv
    b = splines.eval_basis(kv, x, order, left)
    rows = np.vstack([b.values[None, :], b.derivatives]) if order else b.values[None, :]
    pts = curve.points[b.span - kv.degree: b.span + 1]
    return rows @ pts


def test_criterion_1_spline_identities(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {"unity": 0.0, "insert": 0.0, "elevate": 0.0, "circle": 0.0, "continuity": 0.0}
    xs = rng.random(100)
    for p in range(1, 7):
        inner = np.sort(rng.random(5))
        kv = KnotVector(np.r_[np.zeros(p + 1), inner, np.ones(p + 1)], p)
        M = splines.basis_matrix(kv, np.r_[xs, 0.0, 1.0, inner])
        worst["unity"] = max(worst["unity"], np.abs(M.sum(axis=1) - 1.0).max())

        n = kv.num_basis
        curve = NurbsCurve(kv, rng.uniform(-1, 1, (n, 2)), rng.uniform(0.5, 2.0, n))
        ref = curve.evaluate(xs)
        ins = curve
        for x in [0.5] * min(p, 2) + [rng.random()]:
            ins = splines.insert_knot(ins, x)
        worst["insert"] = max(worst["insert"], np.abs(ins.evaluate(xs) - ref).max())
        ele = splines.elevate_degree(curve, 2)
        worst["elevate"] = max(worst["elevate"], np.abs(ele.evaluate(xs) - ref).max())

        # a knot of multiplicity m leaves the curve C^(p-m) there
        for m in range(1, p + 1):
            kv_m = KnotVector(np.r_[np.zeros(p + 1), [0.3], [0.6] * m, np.ones(p + 1)], p)
            poly = NurbsCurve(kv_m, rng.uniform(-1, 1, (kv_m.num_basis, 2)))
            k = p - m
            lo = one_sided_derivatives(poly, 0.6, k, left=True)
            hi = one_sided_derivatives(poly, 0.6, k, left=False)
            scale = np.maximum(np.abs(lo), 1.0)
            worst["continuity"] = max(worst["continuity"], (np.abs(lo - hi) / scale).max())

    for r, c in ((1.0, (0.0, 0.0)), (0.05, (0.3, -0.2)), (7.5, (1.0, 2.0))):
        pts = splines.circle(r, c).evaluate(np.r_[xs, 0.25, 0.5, 0.75, 1.0])
        err = np.abs(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) - r) / r
        worst["circle"] = max(worst["circle"], err.max())
    wall = time.perf_counter() - t0
    ok = all(v <= 1e-12 for v in worst.values()) and wall < 10
    criterion(1, "spline identity suite", ok,
              ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {wall:.1f} s")


def test_criterion_2_sphere_oracle(criterion):
    t0 = time.perf_counter()
    model = iga.spherical_capacitor_model(a=0.05, b=0.10, v_inner=-300e3, v_outer=0.0)
    errs = {}
    for n in (4, 8, 16):
        sol = iga.solve_model(model, 3, 2, n)
        errs[n] = relative_l2_error(sol, model)
    peak = iga.max_field(sol)
    exact = sphere_field(0.05, 0.05, 0.10, -300e3, 0.0)
    rel = abs(peak.value - exact) / exact
    r_loc = float(np.hypot(*peak.location))
    rates = [math.log2(errs[4] / errs[8]), math.log2(errs[8] / errs[16])]
    wall = time.perf_counter() - t0
    ok = (errs[16] < 1e-4 and rel < 5e-3 and r_loc - 0.05 < 0.05 / 16
          and min(rates) >= 3.5 and wall < 120)
    criterion(2, "spherical-capacitor oracle", ok,
              f"L2 {errs[16]:.2e}, E(a) {peak.value / 1e6:.4f} MV/m vs {exact / 1e6:.1f} "
              f"({rel:.2%}) at r={r_loc * 1e3:.2f} mm, rates {rates[0]:.2f}/{rates[1]:.2f}, "
              f"{wall:.1f} s")


def test_criterion_3_field_smoothness(criterion, gun):
    t0 = time.perf_counter()
    smooth, emax = interface_jumps(gun, 3, 2)
    rough, _ = interface_jumps(gun, 1, 0)
    wall = time.perf_counter() - t0
    ratio = rough.min() / max(smooth.max(), 1e-300)
    ok = (smooth.size == 20 and smooth.max() <= 1e-9 * emax and ratio >= 1e3
          and wall < 180)
    criterion(3, "field jumps across element interfaces", ok,
              f"p=3 max jump {smooth.max() / emax:.1e} of max|E|, p=1 min jump "
              f"{rough.min() / emax:.1e}, ratio {ratio:.1e}, {wall:.1f} s")


def test_criterion_4_optimizer_test_functions(criterion):
    t0 = time.perf_counter()
    sph = isres_minimize(Problem(sphere_test, -np.ones(5), np.ones(5)),
                         IsresConfig(seed=0, max_evals=5000))
    corner = isres_minimize(Problem(lambda x: x[0] + x[1], [0, 0], [2, 2],
                                    constraints=lambda x: [0.5 - x[0] * x[1]]),
                            IsresConfig(seed=0))
    ros = local_minimize(Problem(rosenbrock, [-2, -2], [2, 2], x0=[-1.2, 1.0]),
                         LocalConfig(ftol_rel=1e-8, max_evals=5000))
    hit = next(r.index for r in ros.trace if r.f < 1e-3)
    rng = np.random.default_rng(77)
    laws = True
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        f = rng.standard_normal(n)
        pen = np.where(rng.random(n) < 0.5, 0.0, rng.random(n))
        feas = pen[stochastic_rank(f, pen, 0.0, rng)] == 0.0
        laws &= not np.any(~feas[:-1] & feas[1:])
        laws &= np.array_equal(f[stochastic_rank(f, np.zeros(n), rng.random(), rng)],
                               np.sort(f))
    wall = time.perf_counter() - t0
    ok = (sph.f < 1e-2 and sph.evaluations <= 5000 and corner.best.feasible
          and abs(corner.f - math.sqrt(2)) <= 1e-2 and ros.f < 1e-3
          and ros.evaluations <= 5000 and laws and wall < 60)
    criterion(4, "optimizer test functions", ok,
              f"sphere {sph.f:.1e} in {sph.evaluations}, corner {corner.f:.4f}, "
              f"Rosenbrock {ros.f:.1e} in {ros.evaluations} (below 1e-3 at {hit}), rank laws {laws}, {wall:.1f} s")


def test_criterion_5_desk_scale_optimization(criterion, optimized_gun):
    t0 = time.perf_counter()
    problem, res = optimized_gun
    init = problem.compute(problem.x0)[4]["max_field"]
    best = res.best
    reduction = 1.0 - best.info["max_field"] / init
    volume = best.info["volume"]
    fine = GunProblem(problem.model, Objective(n_sub=16)).compute(best.x)
    diff = abs(fine[0] - best.f) / best.f
    wall = time.perf_counter() - t0   # the fixture's run time is reported by --durations
    ok = (best.feasible and volume <= 625e-6 and reduction >= 0.15 and diff < 0.02)
    criterion(5, "desk-scale shape optimization", ok,
              f"E_max {init / 1e6:.3f} -> {best.f / 1e6:.3f} MV/m ({reduction:.1%}), "
              f"V {volume * 1e6:.2f} cm^3, n_sub=16 {fine[0] / 1e6:.3f} MV/m ({diff:.2%}), "
              f"{res.evaluations} evaluations, check {wall:.1f} s")


@pytest.mark.slow
def test_criterion_6_refinement_study(criterion, tmp_path):
    t0 = time.perf_counter()
    code = cli.main(["refine-study", "-o", str(tmp_path / "rs")])
    with open(tmp_path / "rs" / "refine_study.json", encoding="utf-8") as fh:
        rows = json.load(fh)["rows"]
    ok = code == cli.EXIT_OK
    lines = []
    for p in sorted({r["degree"] for r in rows}):
        seq = sorted((r for r in rows if r["degree"] == p), key=lambda r: r["level"])
        e = [r["e_max"] for r in seq]
        n_opt = [r["n_opt"] for r in seq]
        ok &= all(b <= a * 1.01 for a, b in zip(e, e[1:]))
        ok &= all(b > a for a, b in zip(n_opt, n_opt[1:]))
        ok &= all(r["feasible"] and r["v_el"] <= 625e-6 for r in seq)
        lines.append(f"p={p}: " + "/".join(f"{v / 1e6:.3f}" for v in e))
    wall = time.perf_counter() - t0
    ok &= wall < 4 * 3600
    criterion(6, "refinement study", ok, "; ".join(lines) + f" MV/m, {wall:.0f} s")


def test_criterion_7_tracker_oracle(criterion):
    t0 = time.perf_counter()
    fmap = tr.FieldMap.uniform(-300e3 / 0.08, 0.08, 0.01)
    bunch = tr.sample_bunch(tr.BunchSource(), 2 ** 11, seed=0)
    energies = []
    for dt in (0.244e-12, 0.122e-12):
        traj = tr.track(bunch, fmap, tr.TrackingConfig(dt=dt, n_planes=16))
        energies.append(tr.kinetic_energy(traj.snapshots[-1][:, 3:6]))
    stats = tr.beam_stats(traj)
    e_err = np.abs(energies[0] - 300e3).max() / 300e3
    halving = np.abs(energies[0] - energies[1]).max() / 300e3
    rx = np.std(bunch.positions[:, 0])
    ry = np.std(bunch.positions[:, 1])
    radii = max(abs(rx / 0.41e-3 - 1), abs(ry / 0.72e-3 - 1))
    cold = bool(np.all(stats.eps_x == 0.0) and np.all(stats.eps_y == 0.0))
    wall = time.perf_counter() - t0
    ok = e_err <= 1e-3 and halving < 1e-4 and cold and radii <= 0.05 and wall < 60
    criterion(7, "tracker oracle", ok,
              f"energy error {e_err:.1e}, step halving {halving:.1e}, eps_x=eps_y=0 {cold}, "
              f"radii {rx * 1e3:.4f}/{ry * 1e3:.4f} mm, {wall:.1f} s")


def test_criterion_8_tracking_self_convergence(criterion, optimized_gun):
    t0 = time.perf_counter()
    problem, res = optimized_gun
    model = problem.design_model(res.best.x)
    sol = iga.solve_model(model, 3, 2, 16)
    cfg = tr.TrackingConfig()
    grid = iga.FieldmapGrid(cfg.fieldmap_nz, cfg.fieldmap_nr, 0.0, 0.12, 0.0, 0.01)
    fmap = tr.FieldMap(iga.sample_fieldmap(sol, grid))
    bunch = tr.sample_bunch(tr.BunchSource(), 2048, seed=cfg.seed)
    ref = tr.beam_stats(tr.track(bunch, fmap, cfg))
    fine = tr.beam_stats(tr.track(bunch, fmap, cfg.refined()))
    conv = tr.self_convergence(fine, ref)
    wall = time.perf_counter() - t0
    ok = conv.max() < 0.05 and ref.lost == 0 and wall < 1800
    criterion(8, "tracking self-convergence", ok,
              ", ".join(f"{k} {v:.1e}" for k, v in conv.delta.items())
              + f", lost {ref.lost}, {wall:.1f} s")


def test_criterion_9_objective_reduction_law(criterion, optimized_gun):
    t0 = time.perf_counter()
    problem, res = optimized_gun
    zero = problem.with_objective(mode="triple_point_weighted", weight=0.0)
    # identical traces: a seeded global run and the local run
    cfg = IsresConfig(seed=5, max_evals=480)
    ga = isres_minimize(problem, cfg)
    gb = isres_minimize(zero, cfg)
    lb = local_minimize(zero, LocalConfig(ftol_rel=1e-4))

    def same(a, b):
        return len(a) == len(b) and all(
            np.array_equal(ra.x, rb.x) and ra.f == rb.f and ra.penalty == rb.penalty
            for ra, rb in zip(a, b))
    identical = same(ga.trace, gb.trace) and same(res.trace, lb.trace)

    weighted = local_minimize(problem.with_objective(mode="triple_point_weighted",
                                                     weight=0.1), LocalConfig(ftol_rel=1e-4))
    tp0 = res.best.info["tp_term"]
    tp1 = weighted.best.info["tp_term"]
    wall = time.perf_counter() - t0
    ok = identical and weighted.best.feasible and tp1 <= tp0 and wall < 3600
    n_u = problem.model.region.tp_count
    criterion(9, "objective reduction law", ok,
              f"w=0 traces identical {identical}, triple-point mean |E| "
              f"{tp0 / n_u / 1e6:.3f} (w=0) vs {tp1 / n_u / 1e6:.3f} MV/m (w=0.1), {wall:.1f} s")
