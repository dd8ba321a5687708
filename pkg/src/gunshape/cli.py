"""Command-line driver: fit, solve, optimize, refine-study, track, report.

Every run is described by one JSON config (schema version 1). Values given
with ``--set key.path=value`` override config entries; the resolved config
is hashed and the hash and seed go into every output file.
"""
import os

# thread count must be fixed before numpy loads its BLAS
_threads = os.environ.get("GUNSHAPE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import copy  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from importlib import resources  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import geometry as geo  # noqa: E402
from . import iga, splines, tracking  # noqa: E402
from . import optim  # noqa: E402

log = logging.getLogger("gunshape")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class InfeasibleResult(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def default_config():
    text = resources.files("gunshape").joinpath("data/default_config.json").read_text("utf-8")
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = {}
    cur = node
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


def load_config(path=None, overrides=()):
    """Default config, merged with the file at ``path`` and the overrides."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        base = Path(path).resolve().parent
        for key in ("design_file", "spot_file", "fieldmap_file"):
            for section in (user, user.get("tracking", {}), user.get("model", {})):
                if isinstance(section, dict) and isinstance(section.get(key), str):
                    section[key] = str((base / section[key]).resolve())
        cfg = _merge(cfg, user)
    for item in overrides:
        cfg = _merge(cfg, _parse_override(item))
    check_config(cfg)
    return cfg


def check_config(cfg):
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema {cfg.get('schema')!r}")
    kind = cfg["model"].get("kind")
    if kind not in ("gun", "sphere", "file"):
        raise ConfigError(f"unknown model kind {kind!r}")
    if kind == "file" and not Path(cfg["model"].get("path", "")).is_file():
        raise ConfigError("model.path must name an existing model file")
    disc = cfg["discretization"]
    if int(disc["degree"]) < 1 or int(disc["n_sub"]) < 1:
        raise ConfigError("discretization degree and n_sub must be >= 1")
    reg = disc.get("regularity")
    if reg is not None and not 0 <= int(reg) < int(disc["degree"]):
        raise ConfigError("regularity must lie in [0, degree)")
    for key in ("design_file", "spot_file", "fieldmap_file"):
        for section in (cfg, cfg.get("tracking", {})):
            val = section.get(key)
            if val and not Path(val).is_file():
                raise ConfigError(f"{key} {val!r} does not exist")
    if not isinstance(cfg.get("seed"), int):
        raise ConfigError("seed must be an integer")


def config_hash(cfg):
    """SHA-256 of the canonical JSON config, without the output directory."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _stamp(cfg):
    return {"config_hash": config_hash(cfg), "seed": cfg["seed"], "schema": SCHEMA_VERSION}


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _comment(cfg):
    st = _stamp(cfg)
    return f"config_hash={st['config_hash']} seed={st['seed']}"


class OutputDir:
    """Creates the output directory and holds its lock file."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = self.path / ".lock"

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.path} is locked by another run ({self._lock})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self.path

    def __exit__(self, *exc):
        self._lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# model helpers
# ---------------------------------------------------------------------------

def build_model(cfg):
    m = cfg["model"]
    kind = m["kind"]
    if kind == "gun":
        try:
            gun = geo.GunConfig.from_dict(m.get("gun", {}))
        except (TypeError, geo.GeometryError) as exc:
            raise ConfigError(str(exc)) from exc
        model, _ = geo.build_gun_model(gun)
    elif kind == "sphere":
        sp = m.get("sphere", {})
        model = iga.spherical_capacitor_model(
            sp.get("a", 0.05), sp.get("b", 0.10), sp.get("v_inner", -300e3),
            sp.get("v_outer", 0.0), sp.get("grading", 0.2))
    else:
        model = geo.load_model(m["path"])
    if cfg.get("voltages"):
        unknown = set(cfg["voltages"]) - set(geo.DIRICHLET_TAGS)
        if unknown:
            raise ConfigError(f"unknown voltage tags {sorted(unknown)}")
        model = model.with_patches(model.patches,
                                   voltages={**model.voltages, **cfg["voltages"]})
    return model


def load_design(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    values = doc["design"] if isinstance(doc, dict) else doc
    return np.asarray(values, dtype=float).ravel()


def _with_design(cfg, model):
    path = cfg.get("design_file")
    if not path:
        return model
    if model.design is None:
        raise ConfigError("design_file given but the model has no design curve")
    d = load_design(path)
    try:
        return geo.apply_design(model, d.reshape(-1, 2))
    except ValueError as exc:
        raise ConfigError(f"design_file: {exc}") from exc


def _solve(cfg, model):
    disc = cfg["discretization"]
    return iga.solve_model(model, int(disc["degree"]), disc.get("regularity"),
                           int(disc["n_sub"]), method=disc.get("method", "direct"))


def _field_summary(sol, model):
    fm = iga.max_field(sol, model.region)
    out = {"max_field": fm.value, "max_location": [float(v) for v in fm.location],
           "max_patch": fm.patch}
    if model.design is not None:
        out["volume"] = geo.electrode_volume(model)
        out.update(optim.critical_fields(sol, model))
    return out


def _fieldmap_grid(cfg, nz=None, nr=None):
    f = cfg["fieldmap"]
    return iga.FieldmapGrid(int(nz or f["nz"]), int(nr or f["nr"]), float(f["z0"]),
                            float(f["z1"]), float(f["r0"]), float(f["r1"]))


def _gun_problem(cfg, model):
    ob = cfg["objective"]
    try:
        objective = optim.Objective(ob["mode"], float(ob["weight"]), int(ob["degree"]),
                                    ob.get("regularity"), int(ob["n_sub"]))
        cons = optim.ConstraintSet(float(cfg["constraints"]["v_cap"]))
    except optim.OptimizerError as exc:
        raise ConfigError(str(exc)) from exc
    return optim.GunProblem(model, objective, cons)


def _optimizer_config(cfg):
    oc = cfg["optimizer"]
    isres = optim.IsresConfig(**{**oc.get("isres", {}), "seed": cfg["seed"]})
    local = optim.LocalConfig(**oc.get("local", {}))
    return optim.OptimizerConfig(isres, local, bool(oc.get("skip_global", False)))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg, out, outline=None, degree=None):
    """Least-squares fit of a sampled outline (CSV ``rho,z``) or the built-in flat design."""
    gun = geo.GunConfig.from_dict(cfg["model"].get("gun", {}))
    if degree is not None:
        gun = geo.GunConfig.from_dict({**gun.to_dict(), "curve_degree": int(degree)})
    if outline is None:
        curve, (u, pts) = geo.fit_flat_design(gun)
    else:
        pts = np.loadtxt(outline, delimiter=",", comments="#", ndmin=2)
        if pts.shape[1] != 2 or pts.shape[0] < gun.curve_degree + 1:
            raise ConfigError("outline needs at least degree+1 rows of rho,z")
        u = splines.chord_length_params(pts)
        p = gun.curve_degree
        kv = splines.KnotVector(np.r_[np.zeros(p + 1), np.ones(p + 1)], p)
        curve = splines.least_squares_fit(u, pts, kv)
    dist = np.linalg.norm(curve.evaluate(u) - pts, axis=1)
    doc = {**_stamp(cfg), "curve": curve.to_dict(), "residual_max": float(np.max(dist)),
           "residual_rms": float(np.sqrt(np.mean(dist ** 2))),
           "residual_sumsq": splines.fit_residual(curve, u, pts), "samples": int(len(u))}
    _write_json(out / "fit.json", doc)
    print(f"fit: degree {curve.degree}, {curve.points.shape[0]} control points, "
          f"max residual {doc['residual_max']:.3e} m")
    return doc


def cmd_solve(cfg, out):
    model = _with_design(cfg, build_model(cfg))
    t0 = time.perf_counter()
    sol = _solve(cfg, model)
    doc = {**_stamp(cfg), **_field_summary(sol, model), "wall": time.perf_counter() - t0,
           "dofs": int(sol.space.n_dofs)}
    if cfg["model"]["kind"] == "sphere":
        sp = cfg["model"].get("sphere", {})
        a, b = sp.get("a", 0.05), sp.get("b", 0.10)
        dv = sp.get("v_outer", 0.0) - sp.get("v_inner", -300e3)
        exact = abs(dv) * b / (a * (b - a))
        doc["analytic_max_field"] = exact
        doc["relative_error"] = abs(doc["max_field"] - exact) / exact
    for name in cfg.get("profiles", []):
        try:
            s, phi, emag = iga.boundary_profile(sol, name)
        except ValueError:
            log.warning("no boundary named %s in this model", name)
            continue
        iga.write_profile_csv(out / f"profile_{name}.csv", s, phi, emag, _comment(cfg))
    if cfg["model"]["kind"] != "sphere" and cfg.get("fieldmap"):
        grid = _fieldmap_grid(cfg)
        data = iga.export_fieldmap(sol, grid, out / "fieldmap.txt")
        _write_json(out / "fieldmap.meta.json", {**_stamp(cfg), "masked": int((~data.mask).sum())})
        doc["fieldmap"] = "fieldmap.txt"
    _write_json(out / "solve.json", doc)
    print(f"solve: max |E| = {doc['max_field'] / 1e6:.4f} MV/m at "
          f"({doc['max_location'][0]:.4f}, {doc['max_location'][1]:.4f}) m")
    return doc


def _open_trace(cfg, out, resume):
    path = out / "trace.jsonl"
    replay = []
    if resume and path.exists():
        header, replay, _ = optim.read_trace(path)
        if header.get("config_hash") != config_hash(cfg):
            raise ConfigError("checkpoint was written with a different config")
        path.replace(out / "trace.prev.jsonl")
    elif path.exists():
        path.unlink()
    writer = optim.TraceWriter(path, _stamp(cfg))
    return writer, replay


def cmd_optimize(cfg, out, resume=False):
    model = _with_design(cfg, build_model(cfg))
    if model.design is None:
        raise ConfigError("optimize needs a model with a design curve")
    problem = _gun_problem(cfg, model)
    ocfg = _optimizer_config(cfg)
    writer, replay = _open_trace(cfg, out, resume)
    t0 = time.perf_counter()
    try:
        ev = optim.Evaluator(problem, writer, replay)
        init = ev(problem.x0, stage="initial")
        result = optim.two_stage_optimize(problem, ocfg, ev)
    finally:
        writer.close()
    wall = time.perf_counter() - t0
    best = optim.best_record([init] + result.trace)
    final_model = problem.design_model(best.x)
    doc = {**_stamp(cfg), "design": [float(v) for v in best.x],
           "design_shape": list(problem.shape), "evaluations": ev.count,
           "replayed": ev.replayed, "wall": wall, "objective": cfg["objective"],
           "initial": _record_summary(init), "final": _record_summary(best),
           "stopped": {"isres": result.global_result.stopped if result.global_result else None,
                       "local": result.local_result.stopped}}
    if math_finite(init.f) and math_finite(best.f):
        doc["reduction"] = 1.0 - best.f / init.f
    doc["check"] = {}
    for label, m in (("initial", problem.model), ("final", final_model)):
        try:
            doc["check"][label] = _field_summary(_solve(cfg, m), m)
        except (iga.SolverError, geo.GeometryError) as exc:
            doc["check"][label] = {"error": str(exc)}
    _write_json(out / "result.json", doc)
    _write_json(out / "design.json", {**_stamp(cfg), "design": doc["design"]})
    print(f"optimize: f {init.f / 1e6:.4f} -> {best.f / 1e6:.4f} MV/m, "
          f"V_el {best.info.get('volume', float('nan')) * 1e6:.2f} cm^3, {ev.count} evaluations")
    if not best.feasible:
        raise InfeasibleResult("final design violates the constraints")
    return doc


def math_finite(v):
    return v is not None and np.isfinite(v)


def _record_summary(rec):
    return {"f": rec.f, "index": rec.index, "stage": rec.stage, "feasible": rec.feasible,
            "penalty": rec.penalty, "c": list(rec.c), **{
                k: v for k, v in rec.info.items() if k != "timestamp"}}


def _dyadic_knots(level):
    return [j / 2 ** level for j in range(1, 2 ** level, 2)]


def cmd_refine_study(cfg, out):
    """Local optimization along nested knot sequences for each curve degree.

    Level ``k`` halves every knot interval of level ``k - 1``; each level is
    warm-started from the previous optimum, which the refined space
    contains exactly.
    """
    rs = cfg["refine_study"]
    base = _with_design(cfg, build_model(cfg))
    if base.design is None:
        raise ConfigError("refine-study needs a model with a design curve")
    deg0 = base.side_curve(base.design.patch, base.design.side).degree
    local = optim.LocalConfig(**{**cfg["optimizer"].get("local", {}), **rs.get("local", {})})
    rows = []
    with open(out / "refine_study.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {_comment(cfg)}\n")
        fh.write("degree,level,n_opt,e_max,v_el,evaluations\n")
        for p in rs["degrees"]:
            if p < deg0:
                raise ConfigError(f"degree {p} is below the design curve degree {deg0}")
            model = geo.refine_design_curve(base, elevate=p - deg0) if p > deg0 else base
            x_best = None
            for level in range(int(rs["levels"]) + 1):
                if level:
                    model = geo.refine_design_curve(problem.design_model(x_best),
                                                    insert=_dyadic_knots(level))
                problem = _gun_problem(cfg, model)
                res = optim.local_minimize(problem, local)
                best = res.best
                x_best = best.x
                row = {"degree": p, "level": level, "n_opt": problem.dim, "e_max": best.f,
                       "v_el": best.info.get("volume", float("nan")),
                       "evaluations": res.evaluations, "feasible": best.feasible}
                rows.append(row)
                fh.write(f"{p},{level},{problem.dim},{best.f:.10g},{row['v_el']:.10g},"
                         f"{res.evaluations}\n")
                fh.flush()
                print(f"refine-study: p={p} level={level} N_opt={problem.dim} "
                      f"E_max={best.f / 1e6:.4f} MV/m")
    _write_json(out / "refine_study.json", {**_stamp(cfg), "rows": rows})
    if not all(r["feasible"] for r in rows):
        raise InfeasibleResult("some refinement levels ended infeasible")
    return rows


def _tracking_config(cfg, fieldmap_grid=None):
    tc = cfg["tracking"]
    keys = ("dt", "n_planes", "exit_z", "max_time")
    kw = {k: tc[k] for k in keys if k in tc}
    grid = fieldmap_grid or _fieldmap_grid(cfg)
    return tracking.TrackingConfig(fieldmap_nz=grid.nz, fieldmap_nr=grid.nr, seed=cfg["seed"],
                                   **kw)


def _source(cfg):
    src = dict(cfg["tracking"].get("source", {}))
    spot = cfg["tracking"].get("spot_file")
    if spot:
        src["spot"] = tracking.load_spot(spot)
    try:
        source = tracking.BunchSource(**src)
        source.check()
    except (TypeError, tracking.TrackingError) as exc:
        raise ConfigError(f"tracking.source: {exc}") from exc
    return source


def cmd_track(cfg, out):
    """Track a bunch through the fieldmap, then rerun with half the time step."""
    fm_path = cfg["tracking"].get("fieldmap_file")
    if fm_path:
        fmap = tracking.FieldMap.load(fm_path)
    else:
        model = _with_design(cfg, build_model(cfg))
        sol = _solve(cfg, model)
        data = iga.export_fieldmap(sol, _fieldmap_grid(cfg), out / "fieldmap.txt")
        _write_json(out / "fieldmap.meta.json", {**_stamp(cfg), "masked": int((~data.mask).sum())})
        fmap = tracking.FieldMap(data)
    tcfg = _tracking_config(cfg, fmap.grid)
    source = _source(cfg)
    n_p = int(cfg["tracking"]["n_particles"])
    t0 = time.perf_counter()
    bunch = tracking.sample_bunch(source, n_p, cfg["seed"])
    stats = {}
    for label, c in (("reference", tcfg), ("refined", tcfg.refined())):
        traj = tracking.track(bunch, fmap, c)
        stats[label] = tracking.beam_stats(traj)
        name = "tracking.csv" if label == "reference" else "tracking_refined.csv"
        tracking.write_stats_csv(out / name, stats[label], _comment(cfg))
    conv = tracking.self_convergence(stats["refined"], stats["reference"])
    doc = tracking.write_summary(out / "tracking.json", stats["reference"], {
        **_stamp(cfg), "refined_exit": stats["refined"].exit_summary(),
        "delta": conv.delta, "excluded_planes": conv.excluded,
        "dt": tcfg.dt, "n_particles": n_p, "wall": time.perf_counter() - t0})
    print("track: exit x_rms {:.4f} mm, y_rms {:.4f} mm, dE_rms {:.3g} eV, lost {}, "
          "max delta {:.2e}".format(doc["exit"]["x_rms"] * 1e3, doc["exit"]["y_rms"] * 1e3,
                                    doc["exit"]["energy_spread_ev"], doc["exit"]["lost"],
                                    conv.max()))
    return doc


def cmd_report(run_dir):
    """Consolidate a run directory into report.json and report.txt."""
    run_dir = Path(run_dir)
    trace_path = run_dir / "trace.jsonl"
    if not trace_path.is_file():
        raise ConfigError(f"no trace file in {run_dir}")
    header, records, _ = optim.read_trace(trace_path)
    if not records:
        raise ConfigError(f"{trace_path} holds no evaluations")
    init = records[0]
    best = optim.best_record(records)
    report = {"config_hash": header.get("config_hash"), "seed": header.get("seed"),
              "evaluations": len(records),
              "wall": sum(r.wall for r in records),
              "stages": sorted({r.stage for r in records}),
              "initial": _record_summary(init), "final": _record_summary(best)}
    result_path = run_dir / "result.json"
    if result_path.is_file():
        with open(result_path, encoding="utf-8") as fh:
            result = json.load(fh)
        report["critical_fields"] = result.get("check", {})
    track_path = run_dir / "tracking.json"
    if track_path.is_file():
        with open(track_path, encoding="utf-8") as fh:
            report["tracking"] = json.load(fh)
    _write_json(run_dir / "report.json", report)
    lines = [f"run {run_dir.name}  config {report['config_hash']}  seed {report['seed']}",
             f"evaluations {report['evaluations']}",
             "", f"{'':24s}{'initial':>14s}{'final':>14s}"]

    def row(label, a, b, scale=1.0, fmt="{:14.4f}"):
        fa = fmt.format(a * scale) if a is not None else f"{'-':>14s}"
        fb = fmt.format(b * scale) if b is not None else f"{'-':>14s}"
        lines.append(f"{label:24s}{fa}{fb}")

    row("objective [MV/m]", init.f, best.f, 1e-6)
    row("E_max [MV/m]", init.info.get("max_field"), best.info.get("max_field"), 1e-6)
    row("V_el [cm^3]", init.info.get("volume"), best.info.get("volume"), 1e6, "{:14.2f}")
    crit = report.get("critical_fields", {})
    for key, label in (("max_field", "E_max (check) [MV/m]"),
                       ("cathode_center", "E cathode [MV/m]"),
                       ("triple_point_mean", "E triple point [MV/m]"),
                       ("anode_ring", "E anode ring [MV/m]")):
        a = crit.get("initial", {}).get(key)
        b = crit.get("final", {}).get(key)
        if a is not None or b is not None:
            row(label, a, b, 1e-6)
    if "tracking" in report:
        ex = report["tracking"]["exit"]
        lines += ["", f"tracking exit z = {ex['z']:.4f} m, lost {ex['lost']}",
                  f"  x_rms {ex['x_rms'] * 1e3:.4f} mm  y_rms {ex['y_rms'] * 1e3:.4f} mm  "
                  f"z_rms {ex['z_rms'] * 1e3:.4f} mm",
                  f"  eps_x {ex['eps_x']:.4e}  eps_y {ex['eps_y']:.4e} m rad  "
                  f"eps_z {ex['eps_z']:.4e} keV mm",
                  f"  dE_rms {ex['energy_spread_ev']:.4g} eV"]
    with open(run_dir / "report.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="gunshape", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="JSON run config (defaults built in)")
        p.add_argument("-o", "--out", help="output directory (overrides output_dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. discretization.n_sub=8")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("fit", help="least-squares fit of the flat design outline"))
    p.add_argument("--outline", help="CSV of rho,z samples (default: built-in flat design)")
    p.add_argument("--degree", type=int)
    common(sub.add_parser("solve", help="solve the field problem and export profiles/fieldmap"))
    p = common(sub.add_parser("optimize", help="two-stage shape optimization"))
    p.add_argument("--resume", action="store_true", help="resume from the run's trace")
    p.add_argument("--skip-global", action="store_true", help="run the local stage only")
    common(sub.add_parser("refine-study", help="optimize along nested design refinements"))
    common(sub.add_parser("track", help="track a bunch through the fieldmap"))
    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.run_dir)
            return EXIT_OK
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.out:
            overrides.append(f"output_dir={json.dumps(str(args.out))}")
        if getattr(args, "skip_global", False):
            overrides.append("optimizer.skip_global=true")
        cfg = load_config(args.config, overrides)
        with OutputDir(cfg["output_dir"]) as out:
            _write_json(out / "config.resolved.json", {**_stamp(cfg), "config": cfg})
            if args.command == "fit":
                cmd_fit(cfg, out, args.outline, args.degree)
            elif args.command == "solve":
                cmd_solve(cfg, out)
            elif args.command == "optimize":
                cmd_optimize(cfg, out, resume=args.resume)
            elif args.command == "refine-study":
                cmd_refine_study(cfg, out)
            elif args.command == "track":
                cmd_track(cfg, out)
    except ConfigError as exc:
        print(f"gunshape: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleResult as exc:
        print(f"gunshape: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (iga.SolverError, iga.SpaceError, geo.GeometryError, splines.SplineError,
            tracking.TrackingError, optim.OptimizerError, np.linalg.LinAlgError) as exc:
        print(f"gunshape: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
