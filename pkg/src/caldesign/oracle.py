"""Brute-force cross-checks used to validate the solvers.

Two independent routes: a seeded rejection sampler that spews feasible
predictors (their payoffs must never beat the exact optimum), and an
exhaustive search over tiny grids that enumerates support sets and
optimizes the masses exactly on each, giving a tight grid-restricted
optimum to compare against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp_core
from .errors import ValidationError
from .model import INF, Instance, Predictor, ece, indirect_utility_matrix, payoff


@dataclass
class SamplerConfig:
    grid_step: float = 0.1
    samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.grid_step <= 0.5:
            raise ValidationError("BAD_FORMAT", "grid_step must be in (0, 0.5]")
        if self.samples < 1:
            raise ValidationError("BAD_FORMAT", "need at least one sample")


def _grid(step):
    pts = np.arange(0.0, 1.0 + step / 2, step)
    if pts[-1] < 1.0 - 1e-12:
        pts = np.append(pts, 1.0)
    return np.minimum(pts, 1.0)


def sample_feasible(inst: Instance, cfg: SamplerConfig):
    """Yield random predictors with calibration error within the budget.

    Per event, a random support subset of the candidate grid gets Dirichlet
    masses; candidates failing the budget are discarded.  Deterministic for
    a fixed seed.
    """
    rng = np.random.default_rng(cfg.seed)
    grid = _grid(cfg.grid_step)
    for _ in range(cfg.samples):
        mass = np.zeros((inst.n, grid.size))
        for i in range(inst.n):
            size = int(rng.integers(1, min(4, grid.size) + 1))
            cols = rng.choice(grid.size, size=size, replace=False)
            mass[i, cols] = rng.dirichlet(np.ones(size))
        pred = Predictor(grid, mass)
        if ece(pred, inst) <= inst.epsilon + 1e-12:
            yield pred


def _fixed_support_lp(inst, support):
    """LP over masses on a fixed support: maximize payoff within the budget.

    Payoff is linear in the masses; for t = 1 the budget needs one absolute
    value per support point (an auxiliary upper bound each), for t = inf a
    pair of linear rows per point.  Other norms are not LP-representable.
    """
    n, K = inst.n, support.size
    t = inst.norm
    U = indirect_utility_matrix(inst, support)
    nv = n * K + (K if t == 1.0 else 0)
    obj = np.zeros(nv)
    obj[:n * K] = (inst.lam[:, None] * U).ravel()
    lp = lp_core.LinearProgram(nv, obj, [])
    for i in range(n):
        row = np.zeros(nv)
        row[i * K:(i + 1) * K] = 1.0
        lp.add_constraint(row, "==", 1.0)
    # signed calibration gap of point k: sum_i lam_i f_i(k) (theta_i - p_k)
    gap = np.zeros((K, nv))
    for i in range(n):
        gap[:, i * K:(i + 1) * K] = np.eye(K) * inst.lam[i] * \
            (inst.theta[i] - support)[None, :]
    if t == 1.0:
        for k in range(K):
            aux = np.zeros(nv)
            aux[n * K + k] = 1.0
            lp.add_constraint(gap[k] - aux, "<=", 0.0)
            lp.add_constraint(-gap[k] - aux, "<=", 0.0)
        total = np.zeros(nv)
        total[n * K:] = 1.0
        lp.add_constraint(total, "<=", inst.epsilon)
    elif t == INF:
        for k in range(K):
            massrow = np.zeros(nv)
            for i in range(n):
                massrow[i * K + k] = inst.lam[i]
            lp.add_constraint(gap[k] - inst.epsilon * massrow, "<=", 0.0)
            lp.add_constraint(-gap[k] - inst.epsilon * massrow, "<=", 0.0)
    else:
        raise ValidationError("UNSUPPORTED_NORM",
                              "enumeration handles t in {1, inf} only")
    return lp


def exhaustive_best(inst: Instance, grid_step: float):
    """Best predictor over all small support subsets of a coarse grid.

    Enumerates every support set of up to three grid points and solves the
    fixed-support LP on each.  Deliberately capped to tiny instances; raises
    ``TOO_LARGE`` beyond the caps.
    """
    if inst.n > 2 or inst.m > 3:
        raise ValidationError("TOO_LARGE", "enumeration caps: n <= 2, m <= 3")
    if grid_step < 0.05 - 1e-12:
        raise ValidationError("TOO_LARGE", "grid_step below 0.05")
    grid = _grid(grid_step)
    best_val = -np.inf
    best_pred = None
    idx = range(grid.size)
    subsets = [(k,) for k in idx]
    subsets += [(a, b) for a in idx for b in idx if a < b]
    subsets += [(a, b, c) for a in idx for b in idx for c in idx
                if a < b < c]
    for subset in subsets:
        support = grid[list(subset)]
        lp = _fixed_support_lp(inst, support)
        sol = lp_core.solve(lp)
        if not sol.is_optimal:
            continue
        K = support.size
        mass = sol.x[:inst.n * K].reshape(inst.n, K).clip(min=0.0)
        mass /= mass.sum(axis=1, keepdims=True)
        pred = Predictor(support, mass)
        if ece(pred, inst) > inst.epsilon + 1e-9:
            continue
        val = payoff(pred, inst)
        if val > best_val:
            best_val = val
            best_pred = pred
    if best_pred is None:
        raise ValidationError("TOO_LARGE", "no feasible support found")
    return best_pred, float(best_val)
