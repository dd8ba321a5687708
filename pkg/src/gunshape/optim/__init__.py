"""Derivative-free constrained optimizers and the electrode shape problem."""
from dataclasses import dataclass, field

from .core import (EvalRecord, Evaluator, OptimizeResult, OptimizerError, Problem, TraceWriter,
                   best_record, read_trace)
from .gun import ConstraintSet, GunProblem, Objective, critical_fields, evaluate
from .isres import IsresConfig, isres_minimize, stochastic_rank
from .local import LocalConfig, local_minimize


@dataclass
class OptimizerConfig:
    isres: IsresConfig = field(default_factory=IsresConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    skip_global: bool = False


@dataclass
class TwoStageResult:
    best: EvalRecord
    global_result: OptimizeResult
    local_result: OptimizeResult
    trace: list


def two_stage_optimize(problem, config=None, evaluator=None):
    """Global evolution strategy, then the local method from its incumbent.

    The local stage starts from the global best when that is at least as
    good (by feasibility, then objective) as the initial design.
    """
    cfg = config or OptimizerConfig()
    ev = evaluator or Evaluator(problem)
    if ev.trace is not None:
        ev.trace.event("stage", name="isres", skipped=cfg.skip_global)
    g_res = None
    start = problem.x0
    if not cfg.skip_global:
        g_res = isres_minimize(problem, cfg.isres, ev, stage="isres")
        start = g_res.best.x
    if ev.trace is not None:
        ev.trace.event("stage", name="local")
    l_res = local_minimize(problem, cfg.local, ev, stage="local", x0=start)
    trace = (g_res.trace if g_res else []) + l_res.trace
    return TwoStageResult(best_record(trace), g_res, l_res, trace)


__all__ = [
    "ConstraintSet", "EvalRecord", "Evaluator", "GunProblem", "IsresConfig", "LocalConfig",
    "Objective", "OptimizeResult", "OptimizerConfig", "OptimizerError", "Problem",
    "TraceWriter", "TwoStageResult", "best_record", "critical_fields", "evaluate",
    "isres_minimize", "local_minimize", "read_trace", "stochastic_rank", "two_stage_optimize",
]
