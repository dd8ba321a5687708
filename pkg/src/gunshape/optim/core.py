"""Problems, evaluation records and the JSON-lines trace."""
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np


class OptimizerError(ValueError):
    pass


@dataclass
class EvalRecord:
    """One objective evaluation.

    ``c`` holds signed constraint values (feasible when <= 0) in the
    problem's own units, ``g`` the non-negative violations reported to the
    trace and ``penalty`` their weighted sum used for ranking.
    """
    x: np.ndarray
    f: float
    c: tuple = ()
    g: tuple = ()
    penalty: float = 0.0
    stage: str = ""
    index: int = -1
    wall: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.penalty == 0.0 and math.isfinite(self.f)

    def to_json(self):
        return {"type": "eval", "stage": self.stage, "index": self.index,
                "design": [float(v) for v in self.x], "f": float(self.f),
                "c": [float(v) for v in self.c], "g": [float(v) for v in self.g],
                "penalty": float(self.penalty), "wall": self.wall,
                "timestamp": self.info.get("timestamp"),
                "info": {k: v for k, v in self.info.items() if k != "timestamp"}}

    @classmethod
    def from_json(cls, d):
        info = dict(d.get("info", {}))
        info["timestamp"] = d.get("timestamp")
        return cls(np.asarray(d["design"], dtype=float), float(d["f"]), tuple(d["c"]),
                   tuple(d["g"]), float(d["penalty"]), d["stage"], int(d["index"]),
                   float(d["wall"]), info)


class Problem:
    """Box-bounded minimization with inequality constraints ``c(x) <= 0``."""

    def __init__(self, fun, lower, upper, x0=None, constraints=None, name=""):
        self.fun = fun
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise OptimizerError("bounds must be 1-D arrays of equal length")
        if np.any(~np.isfinite(self.lower)) or np.any(~np.isfinite(self.upper)):
            raise OptimizerError("bounds must be finite")
        if np.any(self.upper < self.lower):
            raise OptimizerError("upper bound below lower bound")
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.constraints = constraints
        self.name = name

    @property
    def dim(self):
        return self.lower.size

    def compute(self, x):
        """Return ``(f, c, g, penalty, info)`` for a design inside the box."""
        f = float(self.fun(x))
        c = () if self.constraints is None else tuple(
            float(v) for v in np.atleast_1d(self.constraints(x)))
        g = tuple(max(0.0, v) for v in c)
        return f, c, g, float(sum(g)), {}


class TraceWriter:
    """Append-only JSON-lines trace with a header carrying the seed."""

    def __init__(self, path, header):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")
        if self._fh.tell() == 0:
            self._write({"type": "header", **header})

    def _write(self, obj):
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")
        self._fh.flush()

    def record(self, rec):
        self._write(rec.to_json())

    def event(self, kind, **data):
        self._write({"type": kind, **data})

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path):
    """Return ``(header, records, events)`` from a trace file.

    A truncated last line (interrupted write) is ignored.
    """
    header, records, events = None, [], []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for line in lines:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            break
        kind = obj.get("type")
        if kind == "header":
            header = obj
        elif kind == "eval":
            records.append(EvalRecord.from_json(obj))
        else:
            events.append(obj)
    if header is None:
        raise OptimizerError(f"{path}: trace has no header line")
    return header, records, events


class Evaluator:
    """Counts evaluations, writes the trace and replays a checkpoint.

    With ``replay`` set, the first evaluations are served from the recorded
    trace as long as the requested designs match bit for bit; the run then
    continues live. Deterministic optimizers therefore resume exactly, and
    the rewritten trace equals the uninterrupted one up to timestamps.
    """

    def __init__(self, problem, trace=None, replay=None, max_evals=None):
        self.problem = problem
        self.trace = trace
        self.replay = list(replay or [])
        self.count = 0
        self.replayed = 0
        self.max_evals = max_evals
        self.history = []

    def __call__(self, x, stage=""):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.problem.lower) or np.any(x > self.problem.upper):
            raise OptimizerError("design outside the admissible box")
        idx = self.count
        if idx < len(self.replay) and np.array_equal(self.replay[idx].x, x) \
                and self.replay[idx].stage == stage:
            rec = self.replay[idx]
            self.replayed += 1
        else:
            if idx < len(self.replay):
                self.replay = self.replay[:idx]
            t0 = time.perf_counter()
            f, c, g, pen, info = self.problem.compute(x)
            info = dict(info)
            info["timestamp"] = time.time()
            rec = EvalRecord(x.copy(), f, c, g, pen, stage, idx,
                             time.perf_counter() - t0, info)
        if self.trace is not None:
            self.trace.record(rec)
        self.count += 1
        self.history.append(rec)
        return rec


def best_record(records):
    """Best feasible record, else the least-violating one."""
    feas = [r for r in records if r.feasible]
    if feas:
        return min(feas, key=lambda r: (r.f, r.index))
    return min(records, key=lambda r: (r.penalty, r.f, r.index))


@dataclass
class OptimizeResult:
    best: EvalRecord
    trace: list
    evaluations: int
    stopped: str

    @property
    def x(self):
        return self.best.x

    @property
    def f(self):
        return self.best.f
