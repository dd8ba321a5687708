"""Improved stochastic-ranking evolution strategy."""
import math
from dataclasses import dataclass

import numpy as np

from .core import Evaluator, OptimizeResult, OptimizerError, best_record


def stochastic_rank(f, penalty, p_f, rng):
    """Bubble-sort ranking mixing objective and penalty comparisons.

    Adjacent pairs are compared by objective when both are feasible or with
    probability ``p_f``; otherwise by penalty. At most ``n`` sweeps, stopping
    early once a sweep makes no swap. Returns the permutation, best first.
    """
    f = np.asarray(f, dtype=float)
    pen = np.asarray(penalty, dtype=float)
    n = f.size
    if n == 0:
        raise OptimizerError("cannot rank an empty population")
    if not 0.0 <= p_f <= 1.0:
        raise OptimizerError("p_f must lie in [0, 1]")
    order = np.arange(n)
    for _ in range(n):
        swapped = False
        for j in range(n - 1):
            a, b = order[j], order[j + 1]
            u = rng.random()
            if (pen[a] == 0.0 and pen[b] == 0.0) or u < p_f:
                swap = f[a] > f[b]
            else:
                swap = pen[a] > pen[b]
            if swap:
                order[j], order[j + 1] = b, a
                swapped = True
        if not swapped:
            break
    return order


@dataclass
class IsresConfig:
    population: int = None      # lambda; default 20 * n
    parents: int = None         # mu; default round(lambda / 7)
    p_f: float = 0.45
    max_evals: int = 5000
    ftol_rel: float = 1e-3
    window: int = 5             # generations
    gamma: float = 0.85         # differential-variation step
    alpha: float = 0.2          # step-size smoothing
    retries: int = 10
    expected_rate: float = 1.0  # scales the self-adaptation learning rates
    seed: int = 0

    def resolved(self, n):
        lam = self.population or 20 * n
        mu = self.parents or max(1, int(round(lam / 7)))
        if not mu < lam:
            raise OptimizerError("need parents < population")
        if not 0.0 <= self.p_f <= 1.0:
            raise OptimizerError("p_f must lie in [0, 1]")
        if self.ftol_rel <= 0:
            raise OptimizerError("ftol_rel must be positive")
        return lam, mu


def isres_minimize(problem, config=None, evaluator=None, stage="isres"):
    """(mu, lambda) evolution strategy with stochastic ranking.

    Offspring of the best ``mu - 1`` parents use a differential step
    towards the best individual; the rest mutate with log-normally
    self-adapted per-coordinate step sizes. Out-of-box mutants are redrawn
    a few times, then clipped to the box. The run stops once the best
    feasible value of each of the last ``window + 1`` generations agree to
    ``ftol_rel``, or when the evaluation budget is spent.
    """
    cfg = config or IsresConfig()
    ev = evaluator or Evaluator(problem)
    lo, hi = problem.lower, problem.upper
    n = problem.dim
    if np.any(hi - lo <= 0.0):
        raise OptimizerError("search box has zero measure")
    lam, mu = cfg.resolved(n)
    rng = np.random.default_rng(cfg.seed)
    tau = cfg.expected_rate / math.sqrt(2.0 * math.sqrt(n))
    tau_g = cfg.expected_rate / math.sqrt(2.0 * n)

    x = lo + rng.random((lam, n)) * (hi - lo)
    if problem.x0 is not None:
        x[0] = np.clip(problem.x0, lo, hi)
    sigma = np.tile((hi - lo) / math.sqrt(n), (lam, 1))

    trace = []
    history = []
    stopped = "max_evals"
    while True:
        room = cfg.max_evals - len(trace)
        if room <= 0:
            break
        batch = x[:room]
        recs = [ev(xi, stage) for xi in batch]
        trace.extend(recs)
        if len(recs) < lam:
            break
        f = np.array([r.f for r in recs])
        pen = np.array([r.penalty for r in recs])
        # invalid designs carry an infinite objective; rank them by penalty
        f = np.where(np.isfinite(f), f, np.inf)
        order = stochastic_rank(f, pen, cfg.p_f, rng)
        par_x = x[order[:mu]]
        par_s = sigma[order[:mu]]

        feas = [r.f for r in recs if r.feasible]
        history.append(min(feas) if feas else math.inf)
        if len(history) > cfg.window:
            recent = history[-cfg.window - 1:]
            if all(math.isfinite(v) for v in recent):
                if max(recent) - min(recent) <= cfg.ftol_rel * abs(min(recent)):
                    stopped = "ftol"
                    break

        new_x = np.empty_like(x)
        new_s = np.empty_like(sigma)
        for k in range(lam):
            i = k % mu
            if k < mu - 1:
                # differential variation along the parent ranking
                s_k = par_s[i].copy()
                cand = par_x[i] + cfg.gamma * (par_x[0] - par_x[i + 1])
                if np.any(cand < lo) or np.any(cand > hi):
                    cand = par_x[i] + s_k * rng.standard_normal(n)
            else:
                s_k = par_s[i] * np.exp(tau_g * rng.standard_normal() + tau * rng.standard_normal(n))
                cand = par_x[i] + s_k * rng.standard_normal(n)
                for _ in range(cfg.retries):
                    if not (np.any(cand < lo) or np.any(cand > hi)):
                        break
                    cand = par_x[i] + s_k * rng.standard_normal(n)
            cand = np.clip(cand, lo, hi)
            new_x[k] = cand
            new_s[k] = par_s[i] + cfg.alpha * (s_k - par_s[i])
        x, sigma = new_x, new_s

    return OptimizeResult(best_record(trace), trace, len(trace), stopped)
