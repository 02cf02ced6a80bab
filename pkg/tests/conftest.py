import json
from pathlib import Path

import numpy as np
import pytest

from caldesign.fptas import BiEventPlan, discontinuities
from caldesign.model import Instance, Predictor, validate_instance

DATA = Path(__file__).parent / "data"


def load_fixture(name):
    with open(DATA / name) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def golden_raw():
    return load_fixture("golden.json")


@pytest.fixture(scope="session")
def golden(golden_raw):
    """Three events (0.10001 / 0.85 / 1.0), four actions, capped -inf agent
    utility; its optimal payoff follows known piecewise-linear budget
    formulas, which makes it the golden reference across the suite."""
    return validate_instance(golden_raw)


@pytest.fixture(scope="session")
def two_event():
    """Two events (0.3 / 0.9, uniform prior) with a single throwaway action."""
    return validate_instance(load_fixture("two_event.json"))


@pytest.fixture(scope="session")
def f_dagger():
    return Predictor.from_json_dict(load_fixture("f_dagger.json"))


@pytest.fixture(scope="session")
def f_ddagger():
    return Predictor.from_json_dict(load_fixture("f_ddagger.json"))


def make_instance(theta, lam, agent_utility, principal_utility, epsilon,
                  norm=1.0, actions=None):
    """Array-first constructor used by the random generators."""
    agent_utility = np.asarray(agent_utility, dtype=float)
    m = agent_utility.shape[0]
    actions = actions or [f"a{k}" for k in range(m)]
    return Instance(theta, lam, actions, agent_utility, principal_utility,
                    epsilon, norm)


def random_instance(rng, epsilon, norm=1.0, n_max=4, m_max=3, n_min=1,
                    m_min=1, event_independent=False, utility_scale=1.0):
    n = int(rng.integers(n_min, n_max + 1))
    m = int(rng.integers(m_min, m_max + 1))
    theta = np.sort(rng.uniform(0.0, 1.0, n))
    lam = rng.dirichlet(np.ones(n)) * 0.8 + 0.2 / n
    lam = lam / lam.sum()
    v = rng.uniform(-1.0, 1.0, (m, 2))
    if event_independent:
        u = np.tile(rng.uniform(0.0, utility_scale, (1, m, 1)), (n, 1, 2))
    else:
        u = rng.uniform(0.0, utility_scale, (n, m, 2))
    return make_instance(theta, lam, v, u, epsilon, norm)


def random_binary_instance(rng, epsilon=None):
    """Binary-action instance where only the high action pays (a constant)."""
    n = int(rng.integers(1, 5))
    theta = np.sort(rng.uniform(0.0, 1.0, n))
    lam = rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n
    lam = lam / lam.sum()
    c = float(rng.uniform(0.3, 3.0))
    p_star = float(rng.uniform(0.05, 0.95))
    scale = float(rng.uniform(0.5, 4.0))
    v = np.array([[0.0, 0.0], [-p_star * scale, (1.0 - p_star) * scale]])
    u = np.zeros((n, 2, 2))
    u[:, 1, :] = c
    if epsilon is None:
        epsilon = float(rng.uniform(0.0, 0.5))
    return make_instance(theta, lam, v, u, epsilon, 1.0,
                         actions=["low", "high"])


def random_predictor(rng, inst, max_support=5):
    grid = np.sort(rng.uniform(0.0, 1.0, max_support))
    mass = np.zeros((inst.n, grid.size))
    for i in range(inst.n):
        size = int(rng.integers(1, grid.size + 1))
        cols = rng.choice(grid.size, size=size, replace=False)
        mass[i, cols] = rng.dirichlet(np.ones(size))
    return Predictor(grid, mass)


def random_feasible_plan(rng, inst, moves=6, anchors_only=True):
    """Supply-feasible pairwise plan; starts from the calibrated diagonal and
    moves random mass into pooled entries."""
    if anchors_only:
        anchors = np.unique(np.concatenate([discontinuities(inst),
                                            inst.theta]))
    else:
        anchors = np.sort(rng.uniform(0.0, 1.0, 8))
    diag = {(i, i, float(inst.theta[i]), float(inst.theta[i])): float(inst.lam[i])
            for i in range(inst.n)}
    entries = {}
    for _ in range(moves):
        i = int(rng.integers(0, inst.n))
        j = int(rng.integers(0, inst.n))
        if i > j:
            i, j = j, i
        if i != j and inst.theta[j] - inst.theta[i] <= 1e-12:
            continue
        q = float(inst.theta[i]) if i == j else \
            float(rng.uniform(inst.theta[i], inst.theta[j]))
        p = float(anchors[rng.integers(0, anchors.size)])
        r = 1.0 if i == j else \
            (inst.theta[j] - q) / (inst.theta[j] - inst.theta[i])
        di = (i, i, float(inst.theta[i]), float(inst.theta[i]))
        dj = (j, j, float(inst.theta[j]), float(inst.theta[j]))
        cap_i = diag[di] / r if r > 0 else np.inf
        cap_j = diag[dj] / (1.0 - r) if r < 1 else np.inf
        w = 0.5 * float(rng.random()) * min(cap_i, cap_j)
        if w <= 0:
            continue
        diag[di] -= w * r
        diag[dj] -= w * (1.0 - r)
        key = (i, j, q, p)
        entries[key] = entries.get(key, 0.0) + w
    for key, w in diag.items():
        if w > 0:
            entries[key] = entries.get(key, 0.0) + w
    keys = list(entries)
    return BiEventPlan([k[0] for k in keys], [k[1] for k in keys],
                       [k[2] for k in keys], [k[3] for k in keys],
                       [entries[k] for k in keys])
