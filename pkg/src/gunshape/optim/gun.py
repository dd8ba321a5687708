"""The electrode shape problem: max-field objective under a volume cap."""
import math
from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from .. import iga
from .core import OptimizerError, Problem

MODES = ("max_field", "triple_point_weighted")


@dataclass
class Objective:
    mode: str = "max_field"
    weight: float = 0.1          # triple-point weight (non-published default)
    degree: int = 3
    regularity: int = 2
    n_sub: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise OptimizerError(f"unknown objective mode {self.mode!r}")
        if self.weight < 0:
            raise OptimizerError("triple-point weight must be >= 0")


@dataclass
class ConstraintSet:
    v_cap: float = 625e-6        # m^3
    invalid_penalty: float = 1e6
    volume_scale: float = 1e6    # penalty per m^3, i.e. volume excess counted in cm^3

    def __post_init__(self):
        if self.v_cap <= 0:
            raise OptimizerError("volume cap must be positive")


class GunProblem(Problem):
    """Design vector -> (max |E| [+ w * triple-point sum], volume constraint).

    ``c`` carries the signed volume excess in cm^3; ``g`` reports the
    violation in m^3 and a geometry-invalidity flag. Folded geometries get
    ``f = inf`` and a large penalty instead of raising.
    """

    def __init__(self, model, objective=None, constraints=None, voltages=None):
        self.model = model
        self.objective = objective or Objective()
        self.cons = constraints or ConstraintSet()
        self.voltages = dict(model.voltages if voltages is None else voltages)
        dv = geo.design_vector(model)
        self.shape = dv.values.shape
        super().__init__(None, dv.flat_lower, dv.flat_upper, x0=dv.flat, name="gun")
        ob = self.objective
        self.space = iga.build_space(model, ob.degree, ob.regularity, ob.n_sub)
        self.cache = iga.QuadCache.for_space(self.space)

    def with_objective(self, **kw):
        ob = Objective(**{**self.objective.__dict__, **kw})
        return GunProblem(self.model, ob, self.cons, self.voltages)

    def design_model(self, x):
        return geo.apply_design(self.model, np.asarray(x, dtype=float).reshape(self.shape),
                                check=False)

    def solve(self, x):
        m = self.design_model(x)
        system = iga.assemble(self.space, m, self.voltages, self.cache)
        return iga.solve(system, m), m

    def compute(self, x):
        ob, cons = self.objective, self.cons
        m = self.design_model(x)
        vol = geo.electrode_volume(m)
        excess = vol - cons.v_cap
        c = (excess * 1e6,)
        info = {"volume": vol}
        invalid = 0.0
        f = math.inf
        det = geo.jacobian_determinants(m.patches[m.design.patch].surface, 8)
        if det.min() <= 0.0:
            invalid = 1.0
        else:
            try:
                system = iga.assemble(self.space, m, self.voltages, self.cache)
                sol = iga.solve(system, m)
                fm = iga.max_field(sol, m.region, self.cache.quads)
                roi = geo.region_of_interest(m)
                tp = iga.triple_point_term(sol, roi) if roi.tp_points.shape[0] else 0.0
            except (iga.SolverError, geo.GeometryError):
                invalid = 1.0
            else:
                f = fm.value
                if ob.mode == "triple_point_weighted":
                    f = fm.value + ob.weight * tp
                info.update(max_field=fm.value, location=[float(v) for v in fm.location],
                            patch=fm.patch, tp_term=tp)
        g = (max(0.0, excess), invalid)
        penalty = cons.volume_scale * g[0] + cons.invalid_penalty * g[1]
        return f, c, g, penalty, info


def evaluate(design, objective, constraints, model):
    """Single evaluation record for ``design`` (flat or (k, 2) array)."""
    from .core import Evaluator
    prob = GunProblem(model, objective, constraints)
    return Evaluator(prob)(np.asarray(design, dtype=float).ravel(), stage="eval")


def critical_fields(sol, model):
    """|E| at the cathode centre, triple-point samples and anode-ring edge.

    Cathode and anode values are taken a hair inside the vacuum so they are
    well defined; the triple-point entry is the mean over the sample arc.
    """
    cfg = model.meta.get("config", {})
    a = cfg.get("aperture_radius")
    gap = cfg.get("gap")
    out = {}
    pts = {}
    if gap is not None:
        pts["cathode_center"] = [0.0, 1e-6]
        pts["anode_ring"] = [a, gap - 1e-6]
    for name, p in pts.items():
        e = iga.field_at_points(sol, [p])[0]
        out[name] = float(np.hypot(*e)) if np.all(np.isfinite(e)) else float("nan")
    if model.triple_point is not None and model.region is not None and model.region.tp_count:
        roi = geo.region_of_interest(model)
        if roi.tp_points.shape[0]:
            out["triple_point_mean"] = iga.triple_point_term(sol, roi) / roi.tp_points.shape[0]
    return out
