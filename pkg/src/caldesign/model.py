"""Problem instances, predictors, and the primitive evaluations on them.

An instance bundles the latent events (outcome means ``theta`` and prior
``lam``), the decision maker's action set with its utility table, the
designer's per-event utility table, the error budget ``epsilon`` and the
norm exponent ``t`` used by the calibration metric.

A predictor assigns each event a discrete distribution over prediction
values in [0, 1].  All evaluations here are pure functions: the decision
maker's best response, the designer's indirect utility, the posterior
outcome mean ``kappa`` conditional on a prediction, the expected
calibration error, and both players' expected payoffs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

INF = math.inf

# Stand-in for unbounded utilities; keeps all LP data finite while preserving
# induced best responses (crossings move by O(|v|/UTILITY_CAP)).
UTILITY_CAP = 1e9

# Prediction values closer than this are the same support point.
SUPPORT_MERGE_TOL = 1e-12

# Indifference window for the agent, scaled by utility magnitude so that
# capped (sentinel-sized) payoffs keep a ~1e-9 wide window in p-space.
TIE_TOL = 1e-9


def _as_float_array(x, name, code):
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(code, f"{name} is not numeric: {exc}") from None
    if arr.size and not np.all(np.isfinite(arr) | np.isinf(arr)):
        raise ValidationError(code, f"{name} contains NaN")
    return arr


def _parse_utility(value):
    # JSON cannot carry +/-inf portably, so the strings "inf"/"-inf" are
    # accepted and saturate at the cap like any other oversized value.
    if isinstance(value, str):
        value = float(value)
    return float(value)


class Instance:
    """A validated, normalized problem instance.

    Events are sorted by non-decreasing outcome mean on construction; the
    prior and the designer utility table are permuted consistently.
    Immutable after construction (arrays are set read-only).
    """

    def __init__(self, theta, lam, actions, agent_utility, principal_utility,
                 epsilon=0.0, norm=1.0):
        theta = _as_float_array(theta, "theta", "BAD_MEAN")
        lam = _as_float_array(lam, "lambda", "BAD_PRIOR")
        v = _as_float_array(agent_utility, "agent_utility", "BAD_UTILITY")
        u = _as_float_array(principal_utility, "principal_utility", "BAD_UTILITY")

        if theta.ndim != 1 or theta.size == 0:
            raise ValidationError("BAD_MEAN", "theta must be a non-empty vector")
        n = theta.size
        if np.any(theta < -1e-15) or np.any(theta > 1 + 1e-15):
            raise ValidationError("BAD_MEAN", "outcome means must lie in [0, 1]")
        theta = np.clip(theta, 0.0, 1.0)

        if lam.shape != (n,):
            raise ValidationError("BAD_PRIOR", f"lambda must have length {n}")
        if np.any(lam < -1e-15):
            raise ValidationError("BAD_PRIOR", "prior probabilities must be >= 0")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValidationError("BAD_PRIOR", f"prior sums to {lam.sum()!r}, not 1")
        lam = np.clip(lam, 0.0, None)

        actions = [str(a) for a in actions]
        m = len(actions)
        if m == 0:
            raise ValidationError("BAD_UTILITY", "need at least one action")
        if len(set(actions)) != m:
            raise ValidationError("BAD_UTILITY", "duplicate action names")
        if v.shape != (m, 2):
            raise ValidationError("BAD_UTILITY", f"agent_utility must be {m}x2")
        if u.shape != (n, m, 2):
            raise ValidationError("BAD_UTILITY", f"principal_utility must be {n}x{m}x2")
        if np.any(u < 0):
            raise ValidationError("NEGATIVE_UTILITY", "principal utility must be >= 0")
        # Saturating ingestion of oversized / infinite entries.
        v = np.clip(v, -UTILITY_CAP, UTILITY_CAP)
        u = np.clip(u, 0.0, UTILITY_CAP)

        epsilon = float(epsilon)
        if not epsilon >= 0:
            raise ValidationError("BAD_BUDGET", "epsilon must be >= 0")
        norm = float(norm)
        if not (norm >= 1):
            raise ValidationError("BAD_NORM", "norm exponent must be >= 1 or inf")

        order = np.argsort(theta, kind="stable")
        self.theta = theta[order]
        self.lam = lam[order]
        self.actions = actions
        self.agent_utility = v
        self.principal_utility = u[order]
        self.epsilon = epsilon
        self.norm = norm
        self.n = n
        self.m = m
        # Designer's expected utility per (event, action) under the true mean.
        self.ubar = ((1.0 - self.theta)[:, None] * self.principal_utility[:, :, 0]
                     + self.theta[:, None] * self.principal_utility[:, :, 1])
        # Agent's expected utility per (event, action) under the true mean.
        self.vbar_events = (np.outer(1.0 - self.theta, v[:, 0])
                            + np.outer(self.theta, v[:, 1]))
        self.theta_bar = float(self.lam @ self.theta)
        for arr in (self.theta, self.lam, self.agent_utility,
                    self.principal_utility, self.ubar, self.vbar_events):
            arr.setflags(write=False)

    def with_epsilon(self, epsilon, norm=None):
        """Copy of the instance with a different budget (and optionally norm)."""
        return Instance(self.theta, self.lam, self.actions, self.agent_utility,
                        self.principal_utility, epsilon,
                        self.norm if norm is None else norm)

    def agent_scores(self, ps):
        """Agent expected utility of each action when trusting prediction(s) p.

        Returns shape (m,) for scalar p, else (len(ps), m).
        """
        ps = np.asarray(ps, dtype=float)
        v = self.agent_utility
        scores = ps[..., None] * v[:, 1] + (1.0 - ps[..., None]) * v[:, 0]
        return scores

    def to_json_dict(self):
        return {
            "theta": self.theta.tolist(),
            "lambda": self.lam.tolist(),
            "actions": list(self.actions),
            "agent_utility": {a: self.agent_utility[k].tolist()
                              for k, a in enumerate(self.actions)},
            "principal_utility": [
                {a: self.principal_utility[i, k].tolist()
                 for k, a in enumerate(self.actions)}
                for i in range(self.n)
            ],
            "epsilon": self.epsilon,
            "norm": "inf" if self.norm == INF else self.norm,
        }


def validate_instance(raw):
    """Build a normalized :class:`Instance` from a JSON-shaped description.

    The description holds ``theta``, ``lambda``, ``actions``,
    ``agent_utility`` (action name -> [v(a,0), v(a,1)]), ``principal_utility``
    (one such table per event), ``epsilon`` and ``norm`` (number or "inf").
    """
    if isinstance(raw, Instance):
        return raw
    if not isinstance(raw, dict):
        raise ValidationError("BAD_FORMAT", "instance description must be a mapping")
    try:
        actions = list(raw["actions"])
        theta = raw["theta"]
        lam = raw["lambda"]
        agent_raw = raw["agent_utility"]
        principal_raw = raw["principal_utility"]
    except (KeyError, TypeError) as exc:
        raise ValidationError("BAD_FORMAT", f"missing field {exc}") from None

    def table(mapping, what):
        if not isinstance(mapping, dict):
            raise ValidationError("BAD_FORMAT", f"{what} must map action names")
        rows = []
        for a in actions:
            if str(a) not in mapping:
                raise ValidationError("BAD_FORMAT", f"{what} missing action {a!r}")
            pair = mapping[str(a)]
            if len(pair) != 2:
                raise ValidationError("BAD_FORMAT", f"{what}[{a!r}] needs [y=0, y=1]")
            rows.append([_parse_utility(pair[0]), _parse_utility(pair[1])])
        return rows

    v = table(agent_raw, "agent_utility")
    if not isinstance(principal_raw, list) or len(principal_raw) != len(theta):
        raise ValidationError("BAD_FORMAT",
                              "principal_utility needs one table per event")
    u = [table(entry, "principal_utility") for entry in principal_raw]
    norm = raw.get("norm", 1)
    if isinstance(norm, str):
        if norm.lower() not in ("inf", "infinity"):
            raise ValidationError("BAD_NORM", f"unknown norm {norm!r}")
        norm = INF
    return Instance(theta, lam, actions, v, u,
                    epsilon=raw.get("epsilon", 0.0), norm=norm)


class Predictor:
    """Per-event discrete distributions over prediction values in [0, 1].

    ``support`` is the sorted union of all per-event supports; ``mass`` has
    one row per event aligned to ``support``.  Values closer than
    ``SUPPORT_MERGE_TOL`` are merged on ingestion.
    """

    def __init__(self, support, mass, merge_tol=SUPPORT_MERGE_TOL):
        support = _as_float_array(support, "support", "BAD_SUPPORT").ravel()
        mass = np.atleast_2d(_as_float_array(mass, "mass", "BAD_MASS"))
        if mass.shape[1] != support.size:
            raise ValidationError("BAD_MASS", "mass columns must match support")
        if support.size == 0:
            raise ValidationError("BAD_SUPPORT", "empty support")
        if np.any(support < -1e-12) or np.any(support > 1 + 1e-12):
            raise ValidationError("BAD_SUPPORT", "predictions must lie in [0, 1]")
        support = np.clip(support, 0.0, 1.0)
        if np.any(mass < -1e-12):
            raise ValidationError("BAD_MASS", "negative probability mass")
        mass = np.clip(mass, 0.0, None)

        order = np.argsort(support, kind="stable")
        support = support[order]
        mass = mass[:, order]
        # Merge runs of nearly identical support values.
        keep = []
        sums = []
        start = 0
        for k in range(1, support.size + 1):
            if k == support.size or support[k] - support[k - 1] > merge_tol:
                keep.append(start)
                sums.append(mass[:, start:k].sum(axis=1))
                start = k
        self.support = support[keep]
        self.mass = np.column_stack(sums) if sums else mass
        rows = self.mass.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9):
            raise ValidationError("BAD_MASS",
                                  f"per-event mass sums {rows} are not 1")
        self.support.setflags(write=False)
        self.mass.setflags(write=False)

    @property
    def n_events(self):
        return self.mass.shape[0]

    def marginal(self, lam):
        """Overall probability of each support point under event prior lam."""
        return np.asarray(lam, dtype=float) @ self.mass

    def to_json_dict(self):
        return {"support": self.support.tolist(),
                "mass": [row.tolist() for row in self.mass]}

    @classmethod
    def from_json_dict(cls, raw):
        if not isinstance(raw, dict) or "support" not in raw or "mass" not in raw:
            raise ValidationError("BAD_FORMAT",
                                  "predictor needs 'support' and 'mass'")
        return cls(raw["support"], raw["mass"])


def point_mass(value, n_events):
    """Predictor that reports ``value`` deterministically for every event."""
    return Predictor([value], np.ones((n_events, 1)))


class AgentResponse:
    """Best response at a prediction: the chosen action plus the full tie set."""

    __slots__ = ("prediction", "action", "tied_actions")

    def __init__(self, prediction, action, tied_actions):
        self.prediction = float(prediction)
        self.action = int(action)
        self.tied_actions = tuple(int(a) for a in tied_actions)

    def __repr__(self):
        return (f"AgentResponse(p={self.prediction!r}, action={self.action}, "
                f"tied={self.tied_actions})")


def _tie_tolerances(inst, best_idx):
    """Per-action score tolerance for tie detection; shape broadcastable to scores."""
    vmax = np.maximum(1.0, np.abs(inst.agent_utility).max(axis=1))  # (m,)
    return TIE_TOL * np.maximum(vmax, vmax[best_idx][..., None])


def tied_action_sets(inst, ps):
    """Boolean mask (len(ps), m) of agent-optimal actions at each prediction."""
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    scores = inst.agent_scores(ps)
    best = np.argmax(scores, axis=-1)
    best_score = np.take_along_axis(scores, best[:, None], axis=1)
    return scores >= best_score - _tie_tolerances(inst, best)


def action_profile(inst, ps, weight_matrix=None):
    """Chosen action index at each prediction, breaking ties for the designer.

    ``weight_matrix`` (n, len(ps)) supplies the event weights used to rank
    tied actions; by default the prior is used (the bare-prediction rule).
    """
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    tied = tied_action_sets(inst, ps)
    if weight_matrix is None:
        gains = np.broadcast_to((inst.lam @ inst.ubar)[:, None],
                                (inst.m, ps.size))
    else:
        gains = inst.ubar.T @ np.asarray(weight_matrix, dtype=float)  # (m, P)
    masked = np.where(tied.T, gains, -np.inf)
    return np.argmax(masked, axis=0)


def best_response(inst, p, weights=None):
    """Agent's optimal action at prediction ``p``.

    Ties are broken in the designer's favor: among utility-maximizing
    actions, the one with the largest ``weights``-averaged designer utility
    wins (smallest index on exact ties).  ``weights`` defaults to the prior.
    """
    p = float(p)
    if not -1e-12 <= p <= 1 + 1e-12:
        raise ValidationError("BAD_SUPPORT", f"prediction {p} outside [0, 1]")
    tied = tied_action_sets(inst, [p])[0]
    w = inst.lam if weights is None else np.asarray(weights, dtype=float)
    gains = w @ inst.ubar
    action = int(np.argmax(np.where(tied, gains, -np.inf)))
    return AgentResponse(p, action, np.flatnonzero(tied))


def indirect_utility(inst, i, p):
    """Designer utility in event ``i`` when the agent best-responds to ``p``."""
    if not 0 <= i < inst.n:
        raise ValidationError("BAD_FORMAT", f"event index {i} out of range")
    return float(inst.ubar[i, best_response(inst, p).action])


def indirect_utility_matrix(inst, ps):
    """Matrix (n, len(ps)) of designer utilities under bare best responses."""
    acts = action_profile(inst, ps)
    return inst.ubar[:, acts]


def kappa_values(pred, inst):
    """Posterior outcome mean at each support point; NaN where no mass lands."""
    marg = pred.marginal(inst.lam)
    num = (inst.lam * inst.theta) @ pred.mass
    out = np.full(pred.support.shape, np.nan)
    pos = marg > 0
    out[pos] = num[pos] / marg[pos]
    return out


def kappa(pred, inst, p):
    """Posterior outcome mean conditional on prediction ``p``."""
    hits = np.flatnonzero(np.abs(pred.support - float(p)) <= SUPPORT_MERGE_TOL)
    if hits.size == 0:
        raise ValidationError("ZERO_MASS", f"prediction {p} not in support")
    k = int(hits[0])
    marg = pred.marginal(inst.lam)
    if marg[k] <= 0:
        raise ValidationError("ZERO_MASS", f"prediction {p} has no marginal mass")
    return float(((inst.lam * inst.theta) @ pred.mass[:, k]) / marg[k])


def ece(pred, inst, t=None):
    """Expected calibration error of ``pred`` in the ``t``-norm.

    Finite ``t``: (E |kappa(p) - p|^t)^(1/t) over the prediction marginal.
    ``t = inf``: worst-case |kappa(p) - p| over supported predictions.
    """
    t = inst.norm if t is None else float(t)
    marg = pred.marginal(inst.lam)
    pos = marg > 0
    if not np.any(pos):
        raise ValidationError("BAD_MASS", "predictor carries no mass")
    kap = kappa_values(pred, inst)[pos]
    dev = np.abs(kap - pred.support[pos])
    if t == INF:
        return float(dev.max())
    if t == 1.0:
        return float(marg[pos] @ dev)
    return float((marg[pos] @ dev**t) ** (1.0 / t))


def _support_actions(pred, inst):
    weight = inst.lam[:, None] * pred.mass
    return action_profile(inst, pred.support, weight_matrix=weight)


def payoff(pred, inst):
    """Designer's expected utility under ``pred`` with best-responding agent."""
    acts = _support_actions(pred, inst)
    weight = inst.lam[:, None] * pred.mass
    return float(np.einsum("ik,ik->", weight, inst.ubar[:, acts]))


def agent_payoff(pred, inst):
    """Agent's expected utility under ``pred`` (true outcome distribution)."""
    acts = _support_actions(pred, inst)
    weight = inst.lam[:, None] * pred.mass
    return float(np.einsum("ik,ik->", weight, inst.vbar_events[:, acts]))
