"""Diagnostics for the event-independent setting under the 1-norm budget.

When the designer's indirect utility does not depend on the event, optimal
predictors have a sharp shape: a low interval of under-confident
predictions, a perfectly calibrated middle, and a high interval of
over-confident ones, with the miscalibrated points collinear against the
indirect utility and covered by a convex "certificate" function with
symmetric linear tails.  This module checks membership in that shape,
recalibrates arbitrary predictors through event-independent post-processing
plans, verifies optimality certificates, and carries the closed form for
the binary-action special case.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .model import (
    Instance,
    Predictor,
    SUPPORT_MERGE_TOL,
    ece,
    indirect_utility_matrix,
    kappa_values,
    point_mass,
)
from .fptas import discontinuities

KAPPA_GROUP_TOL = 1e-9
CLASSIFY_TOL = 1e-7
SUPPLY_TOL = 1e-7


def is_event_independent(inst: Instance) -> bool:
    """True when every event sees the same indirect utility everywhere.

    Scanned at the utility breakpoints, the endpoints, and all piece
    midpoints; that covers every value a piecewise-constant indirect
    utility can take.
    """
    zs = discontinuities(inst)
    edges = np.unique(np.concatenate([[0.0, 1.0], zs]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    scan = np.concatenate([edges, mids])
    U = indirect_utility_matrix(inst, scan)
    return bool(np.all(np.abs(U - U[0][None, :]) <= 1e-9))


def _integrated_cdf(values, probs, s):
    """Integral of the CDF from 0 to s for a finite distribution."""
    return float(np.sum(probs * np.clip(s - values, 0.0, None)))


def check_mpc(g, lam, tol=1e-9) -> bool:
    """Mean-preserving-contraction test between finite distributions.

    ``g`` and ``lam`` are (values, probabilities) pairs on [0, 1].  True iff
    the integrated CDF of g sits below that of lam at every support
    breakpoint (the only places the piecewise-linear integrals can touch)
    with equality at s = 1.
    """
    gv, gp = (np.asarray(a, dtype=float) for a in g)
    lv, lp = (np.asarray(a, dtype=float) for a in lam)
    breaks = np.unique(np.concatenate([gv, lv, [1.0]]))
    for s in breaks:
        if _integrated_cdf(gv, gp, s) > _integrated_cdf(lv, lp, s) + tol:
            return False
    return abs(_integrated_cdf(gv, gp, 1.0) - _integrated_cdf(lv, lp, 1.0)) <= tol


def prior_on_means(inst: Instance):
    """The event prior as a distribution over outcome means (ties merged)."""
    values = []
    probs = []
    for th, lm in zip(inst.theta, inst.lam):
        if values and th - values[-1] <= SUPPORT_MERGE_TOL:
            probs[-1] += lm
        else:
            values.append(float(th))
            probs.append(float(lm))
    return np.array(values), np.array(probs)


class EventIndependentPlan:
    """Joint mass over (true expected outcome q, prediction p) pairs."""

    def __init__(self, q, p, w):
        self.q = np.asarray(q, dtype=float).ravel()
        self.p = np.asarray(p, dtype=float).ravel()
        self.w = np.asarray(w, dtype=float).ravel()
        if not (self.q.size == self.p.size == self.w.size):
            raise ValidationError("BAD_PLAN", "ragged plan arrays")
        if np.any(self.w < -1e-12):
            raise ValidationError("BAD_PLAN", "negative plan mass")
        self.w = np.clip(self.w, 0.0, None)
        if abs(self.w.sum() - 1.0) > 1e-9:
            raise ValidationError("BAD_PLAN",
                                  f"plan mass sums to {self.w.sum()!r}, not 1")

    def marginal(self):
        """Distribution of q implied by the plan."""
        qs = np.unique(self.q)
        probs = np.zeros(qs.size)
        idx = np.searchsorted(qs, self.q)
        np.add.at(probs, idx, self.w)
        return qs, probs

    def raw_error(self, t):
        return float(self.w @ np.abs(self.q - self.p) ** t)


def recalibrate(pred: Predictor, inst: Instance):
    """Split a predictor into its calibrated core and the plan that blurs it.

    Support points sharing a posterior mean (within ``KAPPA_GROUP_TOL``)
    collapse into one calibrated atom; the returned plan records how much
    mass each atom sends to each original prediction.  The calibrated part
    has (numerically) zero error, its marginal is a contraction of the
    prior-on-means, and replaying the plan reproduces the original payoff.
    """
    marg = pred.marginal(inst.lam)
    keep = np.flatnonzero(marg > 0)
    kap = kappa_values(pred, inst)[keep]
    order = np.argsort(kap, kind="stable")
    groups = []          # lists of kept-support indices
    for pos in order:
        if groups and kap[pos] - kap[groups[-1][0]] <= KAPPA_GROUP_TOL:
            groups[-1].append(pos)
        else:
            groups.append([pos])

    n = inst.n
    q_atoms = np.empty(len(groups))
    gmass = np.zeros((n, len(groups)))
    plan_q, plan_p, plan_w = [], [], []
    for gidx, members in enumerate(groups):
        cols = keep[members]
        weight = marg[cols]
        q_atoms[gidx] = float(weight @ kap[members] / weight.sum())
        gmass[:, gidx] = pred.mass[:, cols].sum(axis=1)
        for c, w in zip(cols, weight):
            plan_q.append(q_atoms[gidx])
            plan_p.append(float(pred.support[c]))
            plan_w.append(float(w))
    # group means are strictly increasing, so disable support merging to keep
    # the calibrated support aligned with the plan's q-marginal one-to-one
    gtilde = Predictor(q_atoms, gmass, merge_tol=0.0)
    plan = EventIndependentPlan(plan_q, plan_p, plan_w)
    return gtilde, plan


def apply_plan(gtilde: Predictor, plan: EventIndependentPlan,
               inst: Instance) -> Predictor:
    """Blur a perfectly calibrated predictor through a post-processing plan.

    Each calibrated atom q forwards its per-event mass to the plan's
    predictions in proportion chi(q, p) / g(q).  The plan's q-marginal must
    match the calibrated marginal within tolerance.
    """
    gmarg = gtilde.marginal(inst.lam)
    qs, probs = plan.marginal()
    if qs.size != gtilde.support.size or \
            np.any(np.abs(qs - gtilde.support) > 1e-9):
        raise ValidationError("SUPPLY_VIOLATION",
                              "plan q-support differs from the calibrated support")
    if np.any(np.abs(probs - gmarg) > SUPPLY_TOL):
        worst = float(np.abs(probs - gmarg).max())
        raise ValidationError("SUPPLY_VIOLATION",
                              f"plan marginal off by {worst:.3e}")
    support = np.unique(plan.p)
    mass = np.zeros((inst.n, support.size))
    qidx = np.searchsorted(gtilde.support, plan.q - 1e-12)
    qidx = np.clip(qidx, 0, gtilde.support.size - 1)
    pidx = np.searchsorted(support, plan.p)
    for k in range(plan.w.size):
        qa, pa, w = qidx[k], pidx[k], plan.w[k]
        if w <= 0 or gmarg[qa] <= 0:
            continue
        mass[:, pa] += gtilde.mass[:, qa] * (w / gmarg[qa])
    rows = mass.sum(axis=1)
    mass = mass / rows[:, None]
    return Predictor(support, mass)


class StructureReport:
    """Shape diagnostics of a predictor under event-independent utility."""

    def __init__(self, p_low, p_high, classification, collinear_under,
                 collinear_over, under_residual, over_residual,
                 slope_gap, convex_points, violations):
        self.p_low = p_low
        self.p_high = p_high
        self.classification = classification
        self.collinear_under = collinear_under
        self.collinear_over = collinear_over
        self.under_residual = under_residual
        self.over_residual = over_residual
        self.slope_gap = slope_gap
        self.convex_points = convex_points
        self.violations = violations

    @property
    def ok(self):
        return not self.violations

    def to_json_dict(self):
        return {
            "p_low": self.p_low,
            "p_high": self.p_high,
            "classification": self.classification,
            "collinear_under": self.collinear_under,
            "collinear_over": self.collinear_over,
            "under_residual": self.under_residual,
            "over_residual": self.over_residual,
            "slope_gap": self.slope_gap,
            "convex_points": self.convex_points,
            "violations": self.violations,
        }


def _fit_line(xs, ys):
    """(slope, max residual) of the least-squares line, or (nan, 0) if short."""
    if xs.size < 2:
        return float("nan"), 0.0
    if np.ptp(xs) <= 1e-15:
        return float("nan"), float(np.ptp(ys))
    coeffs = np.polyfit(xs, ys, 1)
    resid = np.abs(np.polyval(coeffs, xs) - ys)
    return float(coeffs[0]), float(resid.max())


def analyze_structure(pred: Predictor, inst: Instance) -> StructureReport:
    """Classify support points and test the optimal-shape predictions.

    Reports, never raises, on shape violations: interval ordering of the
    under-confident / calibrated / over-confident points, collinearity of
    each miscalibrated tail against the indirect utility, equal tail-slope
    magnitudes, and convexity of the touched (p, U(p)) points.
    """
    if not is_event_independent(inst):
        raise ValidationError("NOT_EVENT_INDEPENDENT",
                              "structure analysis needs event-independent utility")
    marg = pred.marginal(inst.lam)
    keep = np.flatnonzero(marg > 0)
    ps = pred.support[keep]
    kap = kappa_values(pred, inst)[keep]
    gap = kap - ps
    labels = np.where(gap > CLASSIFY_TOL, "UNDER",
                      np.where(gap < -CLASSIFY_TOL, "OVER", "CALIBRATED"))
    under = ps[labels == "UNDER"]
    over = ps[labels == "OVER"]
    p_low = float(under.max()) if under.size else 0.0
    p_high = float(over.min()) if over.size else 1.0

    violations = []
    # calibrated points are weakly both under- and over-confident, so they
    # may sit anywhere; only a strictly-under point above a strictly-over
    # point breaks the three-interval shape
    if p_low > p_high + CLASSIFY_TOL:
        violations.append("under-confident point above an over-confident one")

    U = indirect_utility_matrix(inst, ps)[0]
    under_slope, under_resid = _fit_line(under, U[labels == "UNDER"])
    over_slope, over_resid = _fit_line(over, U[labels == "OVER"])
    collinear_under = under_resid <= 1e-6
    collinear_over = over_resid <= 1e-6
    if not collinear_under:
        violations.append(f"under tail not collinear (residual {under_resid:.2e})")
    if not collinear_over:
        violations.append(f"over tail not collinear (residual {over_resid:.2e})")
    slope_gap = 0.0
    if np.isfinite(under_slope) and np.isfinite(over_slope):
        slope_gap = abs(abs(under_slope) - abs(over_slope))
        if slope_gap > 1e-6:
            violations.append(f"tail slope magnitudes differ by {slope_gap:.2e}")

    order = np.argsort(ps)
    xs, ys = ps[order], U[order]
    convex = True
    for k in range(1, xs.size - 1):
        left = (ys[k] - ys[k - 1]) * (xs[k + 1] - xs[k])
        right = (ys[k + 1] - ys[k]) * (xs[k] - xs[k - 1])
        if left > right + 1e-9 * max(1.0, abs(ys[k])):
            convex = False
            break
    if not convex:
        violations.append("touched utility points are not convex")

    return StructureReport(p_low, p_high, labels.tolist(), collinear_under,
                           collinear_over, under_resid, over_resid,
                           slope_gap, convex, violations)


class GammaCertificate:
    """Piecewise-linear convex function with symmetric linear tails.

    Knots define the function on [0, 1]; the designated tails
    [0, x_low] and [x_high, 1] must be linear with slopes -alpha and +alpha
    (degenerate tails are allowed and vacuous).
    """

    def __init__(self, knots, alpha, x_low, x_high):
        knots = sorted((float(x), float(y)) for x, y in knots)
        self.knots_x = np.array([k[0] for k in knots])
        self.knots_y = np.array([k[1] for k in knots])
        if self.knots_x.size < 2 or self.knots_x[0] > 1e-12 \
                or self.knots_x[-1] < 1 - 1e-12:
            raise ValidationError("BAD_CERTIFICATE",
                                  "knots must span [0, 1]")
        self.alpha = float(alpha)
        self.x_low = float(x_low)
        self.x_high = float(x_high)
        if self.alpha < 0 or not 0 <= self.x_low <= self.x_high <= 1:
            raise ValidationError("BAD_CERTIFICATE", "bad tail parameters")
        slopes = np.diff(self.knots_y) / np.diff(self.knots_x)
        if np.any(np.diff(slopes) < -1e-9):
            raise ValidationError("BAD_CERTIFICATE", "knots are not convex")
        for lo, hi, want in ((0.0, self.x_low, -self.alpha),
                             (self.x_high, 1.0, self.alpha)):
            if hi - lo <= 1e-12:
                continue
            got = (self(hi) - self(lo)) / (hi - lo)
            inner = self.knots_x[(self.knots_x > lo + 1e-12)
                                 & (self.knots_x < hi - 1e-12)]
            on_line = np.abs(self(inner) - (self(lo) + got * (inner - lo)))
            if abs(got - want) > 1e-9 or np.any(on_line > 1e-9):
                raise ValidationError("BAD_CERTIFICATE",
                                      "tail is not linear with slope +/-alpha")

    def __call__(self, x):
        return np.interp(x, self.knots_x, self.knots_y)

    def in_tails(self, x, tol=1e-9):
        return (x <= self.x_low + tol) | (x >= self.x_high - tol)

    def to_json_dict(self):
        return {"knots": [[float(x), float(y)] for x, y in
                          zip(self.knots_x, self.knots_y)],
                "alpha": self.alpha, "x_low": self.x_low, "x_high": self.x_high}

    @classmethod
    def from_json_dict(cls, raw):
        try:
            return cls(raw["knots"], raw["alpha"], raw["x_low"], raw["x_high"])
        except (KeyError, TypeError) as exc:
            raise ValidationError("BAD_CERTIFICATE",
                                  f"missing field {exc}") from None


class OptimalityVerdict:
    """Per-condition outcome of the certificate check; all-pass certifies."""

    FIELDS = ("budget_complementarity", "touches_support", "dominates_utility",
              "miscalibrated_in_tails", "expected_value_match", "contraction")

    def __init__(self, **flags):
        for f in self.FIELDS:
            setattr(self, f, bool(flags[f]))
        self.details = flags.get("details", {})

    @property
    def all_pass(self):
        return all(getattr(self, f) for f in self.FIELDS)

    def to_json_dict(self):
        out = {f: getattr(self, f) for f in self.FIELDS}
        out["all_pass"] = self.all_pass
        out["details"] = self.details
        return out


def verify_optimality(pred: Predictor, inst: Instance,
                      cert: GammaCertificate) -> OptimalityVerdict:
    """Check the five certificate conditions for 1-norm optimality.

    (i) the tail slope is complementary to budget slack; (ii) the
    certificate touches the utility on the support and dominates it
    everywhere (dense scan plus exact per-piece endpoint checks); (iii)
    every miscalibrated prediction and its posterior mean lie in the linear
    tails; (iv) the certificate has equal expectation under the recalibrated
    marginal and the prior-on-means; (v) that marginal is a contraction of
    the prior-on-means.  All passing certifies the predictor optimal.
    """
    if not is_event_independent(inst):
        raise ValidationError("NOT_EVENT_INDEPENDENT",
                              "certificates apply to event-independent utility")
    err = ece(pred, inst, 1.0)
    cond_budget = abs(cert.alpha * (err - inst.epsilon)) <= 1e-7

    marg = pred.marginal(inst.lam)
    keep = np.flatnonzero(marg > 0)
    ps = pred.support[keep]
    U_support = indirect_utility_matrix(inst, ps)[0]
    cond_touch = bool(np.all(np.abs(cert(ps) - U_support) <= 1e-7))

    zs = discontinuities(inst)
    scan = [np.arange(0.0, 1.0 + 1e-12, 1e-4), zs, cert.knots_x, ps]
    for z in zs:
        scan.append(np.array([z - 1e-9, z + 1e-9]))
    edges = np.unique(np.concatenate([[0.0, 1.0], zs]))
    # exact per-piece check: utility is constant between breakpoints, so the
    # certificate (convex) only needs checking at piece ends and its own knots
    scan.append(0.5 * (edges[:-1] + edges[1:]))
    grid = np.unique(np.clip(np.concatenate(scan), 0.0, 1.0))
    U_grid = indirect_utility_matrix(inst, grid)[0]
    # Scan offsets at z +/- 1e-9 sit inside the agent's indifference window,
    # where the utility takes its upper value; allow the certificate to dip
    # below by its slope times that offset.
    dom_slack = 1e-9 * (2.0 + cert.alpha)
    cond_dom = bool(np.all(cert(grid) >= U_grid - dom_slack))

    kap = kappa_values(pred, inst)[keep]
    miscal = np.abs(kap - ps) > CLASSIFY_TOL
    cond_tails = bool(np.all(cert.in_tails(ps[miscal]))
                      and np.all(cert.in_tails(kap[miscal])))

    gtilde, _ = recalibrate(pred, inst)
    gmarg = gtilde.marginal(inst.lam)
    lam_vals, lam_probs = prior_on_means(inst)
    e_g = float(gmarg @ cert(gtilde.support))
    e_lam = float(lam_probs @ cert(lam_vals))
    cond_expect = abs(e_g - e_lam) <= 1e-7
    cond_mpc = check_mpc((gtilde.support, gmarg), (lam_vals, lam_probs))

    return OptimalityVerdict(
        budget_complementarity=cond_budget,
        touches_support=cond_touch,
        dominates_utility=cond_dom,
        miscalibrated_in_tails=cond_tails,
        expected_value_match=cond_expect,
        contraction=cond_mpc,
        details={"ece": err, "alpha": cert.alpha,
                 "certificate_gap": float(np.min(cert(grid) - U_grid)),
                 "expected_gamma_gap": e_g - e_lam},
    )


def _binary_shape(inst: Instance):
    """(high_action, unit_payoff, threshold) of a binary reach-the-high-action
    instance, or a ``NOT_BINARY_SHAPE`` error."""
    if inst.m != 2:
        raise ValidationError("NOT_BINARY_SHAPE", "needs exactly two actions")
    if inst.norm != 1.0:
        raise ValidationError("NOT_BINARY_SHAPE", "closed form holds for t=1")
    u = inst.principal_utility
    consts = [np.unique(np.round(u[:, a, :], 12)) for a in range(2)]
    flat = [c.size == 1 for c in consts]
    if not all(flat):
        raise ValidationError("NOT_BINARY_SHAPE",
                              "designer utility must be action-only")
    vals = np.array([consts[0][0], consts[1][0]])
    if np.count_nonzero(vals) != 1:
        raise ValidationError("NOT_BINARY_SHAPE",
                              "one action must pay a positive constant, one zero")
    high = int(np.argmax(vals))
    c = float(vals[high])
    v = inst.agent_utility
    slope = (v[high, 1] - v[1 - high, 1]) - (v[high, 0] - v[1 - high, 0])
    gap0 = v[high, 0] - v[1 - high, 0]  # score gap at p = 0
    if slope <= 0:
        raise ValidationError("NOT_BINARY_SHAPE",
                              "high action must win for large predictions")
    threshold = -gap0 / slope
    if threshold >= 1 - 1e-12:
        raise ValidationError("NOT_BINARY_SHAPE",
                              "high action is never an agent best response")
    threshold = max(threshold, 0.0)
    return high, c, threshold


def binary_action_optimal(inst: Instance) -> Predictor:
    """Closed-form optimal predictor when only reaching one action pays.

    High budget (eps >= threshold - mean): pool everything at
    max(mean, threshold).  Low budget: reveal low events, pull every event
    past a cut-off up to the threshold prediction, and split the cut-off
    event so the budget is exactly exhausted.
    """
    _, _, p_star = _binary_shape(inst)
    eps = inst.epsilon
    theta, lam = inst.theta, inst.lam
    n = inst.n
    if eps >= p_star - inst.theta_bar:
        return point_mass(max(inst.theta_bar, p_star), n)

    # tail(k) = sum_{i > k} lam_i (p* - theta_i); scan k = n..1 for the
    # window tail(k) <= eps < tail(k) + lam_k (p* - theta_k)
    tail = 0.0
    cut = None
    for k in range(n - 1, -1, -1):
        step = lam[k] * (p_star - theta[k])
        if step > 0 and tail <= eps < tail + step:
            cut = k
            break
        tail += step
    if cut is None:  # numerical corner: budget equals the case boundary
        return point_mass(max(inst.theta_bar, p_star), n)
    split = (eps - tail) / (lam[cut] * (p_star - theta[cut]))
    support = list(theta[:cut]) + [theta[cut], p_star]
    mass = np.zeros((n, len(support)))
    for i in range(cut):
        mass[i, i] = 1.0
    mass[cut, cut] = 1.0 - split
    mass[cut, cut + 1] = split
    for i in range(cut + 1, n):
        mass[i, cut + 1] = 1.0
    return Predictor(support, mass)


def binary_action_certificate(inst: Instance) -> GammaCertificate:
    """Natural certificate for the binary closed form.

    With budget slack the certificate is flat at the winning payoff; with
    the budget exhausted it rises linearly from the anchor (the cut-off
    event's mean, or the lowest mean when everything pools) through
    (threshold, payoff).
    """
    _, c, p_star = _binary_shape(inst)
    pred = binary_action_optimal(inst)
    err = ece(pred, inst, 1.0)
    if err < inst.epsilon - 1e-12 or err <= 1e-12:
        # slack (or a perfectly calibrated solution): flat certificate
        return GammaCertificate([(0.0, c), (1.0, c)], 0.0, 0.0, 0.0)
    if inst.epsilon >= p_star - inst.theta_bar:
        anchor = float(inst.theta[0])
        alpha = c / (p_star - anchor)
        knots = [(0.0, alpha * anchor), (anchor, 0.0),
                 (1.0, alpha * (1.0 - anchor))]
        return GammaCertificate(knots, alpha, anchor, anchor)
    marg = pred.marginal(inst.lam)
    keep = pred.support[marg > 0]
    anchored = keep[keep < p_star - 1e-12]
    anchor = float(anchored.max()) if anchored.size else float(inst.theta[0])
    alpha = c / (p_star - anchor)
    knots = [(0.0, 0.0), (anchor, 0.0), (1.0, alpha * (1.0 - anchor))]
    if anchor <= 1e-12:
        knots = [(0.0, 0.0), (1.0, alpha)]
    return GammaCertificate(knots, alpha, 0.0, anchor)


class PredictionCounts:
    """Support-size statistics of a predictor."""

    def __init__(self, total, per_event_max, per_outcome_max):
        self.total = int(total)
        self.per_event_max = int(per_event_max)
        self.per_outcome_max = int(per_outcome_max)

    def astuple(self):
        return (self.total, self.per_event_max, self.per_outcome_max)

    def __repr__(self):
        return (f"PredictionCounts(total={self.total}, "
                f"per_event_max={self.per_event_max}, "
                f"per_outcome_max={self.per_outcome_max})")


def count_predictions(pred: Predictor, inst: Instance) -> PredictionCounts:
    """Counts behind the support-size bounds: overall, per event, and per
    shared posterior mean."""
    marg = pred.marginal(inst.lam)
    keep = np.flatnonzero(marg > 0)
    total = keep.size
    per_event = int(np.max((pred.mass[:, keep] > 1e-12).sum(axis=1), initial=0))
    kap = np.sort(kappa_values(pred, inst)[keep])
    best = run = 1 if kap.size else 0
    for k in range(1, kap.size):
        run = run + 1 if kap[k] - kap[k - 1] <= KAPPA_GROUP_TOL else 1
        best = max(best, run)
    return PredictionCounts(total, per_event, best)
