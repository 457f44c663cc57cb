"""Constraint descriptors, feasibility checks, and solidity classification.

A constraint set is *solid* when it is closed under componentwise
convex-order reduction inside the clearing class: replacing a feasible
allocation by one whose shares are all smaller in convex order, and which
still clears the aggregate, can never leave the feasible region.  Solid sets
admit comonotonic optimizers, so the classification gates whether the
comonotonic search spaces used by the solvers are exhaustive.

Classification is syntactic over the constraint grammar and never semantic:
a NotSolid verdict means "not certified solid".  ``falsify_solidity``
searches for an empirical witness, a feasible allocation together with an
infeasible convex-order reduction of it, and absence of a witness is not a
proof of solidity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .allocation import Allocation, check_clearing, comonotonic_improvement, condition_on_aggregate
from .errors import ContractError, ValidationError
from .probspace import RandomVariable, moments
from .riskmeasures import (
    Consistency,
    RiskMeasureSpec,
    _validate_ladder,
    cx_consistency_flag,
    evaluate,
    expected_convex_loss,
)
from .stochorder import convex_order_leq

FEASIBILITY_TOL = 1e-9
ENVELOPE_SLOPE_TOL = 1e-12
FALSIFY_CHAIN_LIMIT = 16
FALSIFY_GAP_EPS = 1e-9


@dataclass(frozen=True)
class PathwiseBounds:
    """Statewise box lower <= X(w) <= upper; either side may be infinite."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ValidationError("pathwise bounds must not be NaN")
        if self.lower > self.upper:
            raise ValidationError("pathwise bounds need lower <= upper")


_RELATIONS = ("<=", "==", ">=")


@dataclass(frozen=True)
class ExpectationConstraint:
    """E[X] relation bound, with relation one of <=, ==, >=."""

    relation: str
    bound: float

    def __post_init__(self):
        if self.relation not in _RELATIONS:
            raise ValidationError(f"relation must be one of {_RELATIONS}")
        object.__setattr__(self, "bound", float(self.bound))
        if not math.isfinite(self.bound):
            raise ValidationError("expectation bound must be finite")


@dataclass(frozen=True)
class OrliczBound:
    """E[phi(X)] <= bound for the convex ladder phi with parameters
    (alpha, beta, R, B)."""

    ladder: tuple
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "ladder", _validate_ladder(self.ladder))
        object.__setattr__(self, "bound", float(self.bound))
        if not math.isfinite(self.bound):
            raise ValidationError("penalty bound must be finite")


@dataclass(frozen=True)
class RiskCeiling:
    """measure(X) <= bound."""

    measure: RiskMeasureSpec
    bound: float

    def __post_init__(self):
        if not isinstance(self.measure, RiskMeasureSpec):
            raise ValidationError("ceiling needs a RiskMeasureSpec")
        object.__setattr__(self, "bound", float(self.bound))
        if not math.isfinite(self.bound):
            raise ValidationError("ceiling bound must be finite")


@dataclass(frozen=True)
class RiskFloor:
    """measure(X) >= bound."""

    measure: RiskMeasureSpec
    bound: float

    def __post_init__(self):
        if not isinstance(self.measure, RiskMeasureSpec):
            raise ValidationError("floor needs a RiskMeasureSpec")
        object.__setattr__(self, "bound", float(self.bound))
        if not math.isfinite(self.bound):
            raise ValidationError("floor bound must be finite")


@dataclass(frozen=True)
class IdiosyncraticRetention:
    """Below the deductible the share must equal the endowment exactly;
    at or above it the share must stay at or above the deductible."""

    endowment: RandomVariable
    deductible: float

    def __post_init__(self):
        if not isinstance(self.endowment, RandomVariable):
            raise ValidationError("retention endowment must be a RandomVariable")
        object.__setattr__(self, "deductible", float(self.deductible))
        if not math.isfinite(self.deductible):
            raise ValidationError("deductible must be finite")


def _normalize_breakpoints(points, label):
    try:
        pts = tuple((float(s), float(v)) for s, v in points)
    except (TypeError, ValueError):
        raise ValidationError(f"{label} envelope needs (s, value) breakpoint pairs")
    if not pts:
        raise ValidationError(f"{label} envelope needs at least one breakpoint")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise ValidationError(f"{label} envelope breakpoints must be finite")
    if np.any(np.diff(xs) <= 0):
        raise ValidationError(f"{label} envelope breakpoints must have increasing s")
    return pts


def _pl_eval(points, s):
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    return np.interp(s, xs, ys)


@dataclass(frozen=True)
class AggregateEnvelope:
    """Statewise band lower(S(w)) <= X(w) <= upper(S(w)) given by
    piecewise-linear breakpoint lists covering the aggregate support."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", _normalize_breakpoints(self.lower, "lower"))
        object.__setattr__(self, "upper", _normalize_breakpoints(self.upper, "upper"))
        grid = sorted({p[0] for p in self.lower} | {p[0] for p in self.upper})
        lo = _pl_eval(self.lower, grid)
        hi = _pl_eval(self.upper, grid)
        if np.any(lo > hi + 1e-12):
            raise ValidationError("lower envelope exceeds upper envelope")


_KIND_TYPES = (
    PathwiseBounds,
    ExpectationConstraint,
    OrliczBound,
    RiskCeiling,
    RiskFloor,
    IdiosyncraticRetention,
    AggregateEnvelope,
)


@dataclass(frozen=True)
class Constraint:
    """One constraint kind applied to a single agent (scope=index) or to
    every agent (scope=None)."""

    kind: object
    scope: int = None

    def __post_init__(self):
        if not isinstance(self.kind, _KIND_TYPES):
            raise ValidationError(f"unsupported constraint kind {type(self.kind).__name__}")
        if self.scope is not None:
            scope = int(self.scope)
            if scope < 0:
                raise ValidationError("scope must be a nonnegative agent index or None")
            object.__setattr__(self, "scope", scope)

    def agents(self, n_agents):
        if self.scope is None:
            return range(n_agents)
        if self.scope >= n_agents:
            raise ValidationError(
                f"constraint scoped to agent {self.scope} but allocation has {n_agents}"
            )
        return (self.scope,)


@dataclass(frozen=True)
class Violation:
    """One feasibility breach: which constraint, which agent, where, and by
    how much (magnitude is always the positive overshoot)."""

    constraint_index: int
    agent: int
    atom: str
    magnitude: float
    message: str


def _check_envelope_coverage(kind, s_values):
    lo_xs = (kind.lower[0][0], kind.lower[-1][0])
    hi_xs = (kind.upper[0][0], kind.upper[-1][0])
    smin, smax = float(np.min(s_values)), float(np.max(s_values))
    for name, (left, right) in (("lower", lo_xs), ("upper", hi_xs)):
        if smin < left - 1e-9 or smax > right + 1e-9:
            raise ValidationError(
                f"{name} envelope breakpoints do not cover the aggregate support"
            )


def check_feasible(A, constraints, tol=FEASIBILITY_TOL):
    """Evaluate every constraint against the allocation.

    Returns (feasible, violations); violations are ordered by constraint,
    then agent, then atom.  The allocation must clear its aggregate.
    """
    ok, residual = check_clearing(A)
    if not ok:
        raise ContractError(f"allocation does not clear the aggregate (residual {residual:g})")
    labels = A.space.labels
    violations = []
    for ci, constraint in enumerate(constraints):
        if not isinstance(constraint, Constraint):
            raise ValidationError("check_feasible expects Constraint instances")
        kind = constraint.kind
        for i in constraint.agents(A.n_agents):
            share = A.shares[i]
            if isinstance(kind, PathwiseBounds):
                for a, v in enumerate(share.values):
                    if v < kind.lower - tol:
                        violations.append(Violation(
                            ci, i, labels[a], kind.lower - float(v),
                            f"agent {i} share {v:g} below lower bound {kind.lower:g}"))
                    elif v > kind.upper + tol:
                        violations.append(Violation(
                            ci, i, labels[a], float(v) - kind.upper,
                            f"agent {i} share {v:g} above upper bound {kind.upper:g}"))
            elif isinstance(kind, ExpectationConstraint):
                mean, _ = moments(share)
                gap = 0.0
                if kind.relation == "<=":
                    gap = mean - kind.bound
                elif kind.relation == ">=":
                    gap = kind.bound - mean
                else:
                    gap = abs(mean - kind.bound)
                if gap > tol:
                    violations.append(Violation(
                        ci, i, None, gap,
                        f"agent {i} mean {mean:g} fails E[X] {kind.relation} {kind.bound:g}"))
            elif isinstance(kind, OrliczBound):
                value = expected_convex_loss(share, kind.ladder)
                if value > kind.bound + tol:
                    violations.append(Violation(
                        ci, i, None, value - kind.bound,
                        f"agent {i} convex penalty {value:g} exceeds {kind.bound:g}"))
            elif isinstance(kind, RiskCeiling):
                value = evaluate(kind.measure, share)
                if value > kind.bound + tol:
                    violations.append(Violation(
                        ci, i, None, value - kind.bound,
                        f"agent {i} {kind.measure.describe()} = {value:g} exceeds "
                        f"ceiling {kind.bound:g}"))
            elif isinstance(kind, RiskFloor):
                value = evaluate(kind.measure, share)
                if value < kind.bound - tol:
                    violations.append(Violation(
                        ci, i, None, kind.bound - value,
                        f"agent {i} {kind.measure.describe()} = {value:g} below "
                        f"floor {kind.bound:g}"))
            elif isinstance(kind, IdiosyncraticRetention):
                zeta = kind.endowment
                if zeta.space != A.space:
                    raise ValidationError("retention endowment lives on a different space")
                for a in range(A.space.size):
                    z = float(zeta.values[a])
                    x = float(share.values[a])
                    if z < kind.deductible - tol:
                        dev = abs(x - z)
                        if dev > tol:
                            violations.append(Violation(
                                ci, i, labels[a], dev,
                                f"agent {i} share {x:g} must equal endowment {z:g} "
                                f"below deductible {kind.deductible:g}"))
                    elif x < kind.deductible - tol:
                        violations.append(Violation(
                            ci, i, labels[a], kind.deductible - x,
                            f"agent {i} share {x:g} below deductible "
                            f"{kind.deductible:g} on a retained state"))
            else:
                s_values = A.aggregate.values
                _check_envelope_coverage(kind, s_values)
                lo = _pl_eval(kind.lower, s_values)
                hi = _pl_eval(kind.upper, s_values)
                for a, v in enumerate(share.values):
                    if v < lo[a] - tol:
                        violations.append(Violation(
                            ci, i, labels[a], float(lo[a] - v),
                            f"agent {i} share {v:g} below envelope {lo[a]:g} "
                            f"at S = {s_values[a]:g}"))
                    elif v > hi[a] + tol:
                        violations.append(Violation(
                            ci, i, labels[a], float(v - hi[a]),
                            f"agent {i} share {v:g} above envelope {hi[a]:g} "
                            f"at S = {s_values[a]:g}"))
    return len(violations) == 0, violations


class Solidity(enum.Enum):
    SOLID = "Solid"
    NOT_SOLID = "NotSolid"
    UNKNOWN = "Unknown"


_MEET_RANK = {Solidity.NOT_SOLID: 0, Solidity.UNKNOWN: 1, Solidity.SOLID: 2}


@dataclass(frozen=True)
class SolidityVerdict:
    status: Solidity
    reason: str
    witness: object = None


def _format_slope(slope):
    frac = Fraction(slope).limit_denominator(10 ** 6)
    if abs(float(frac) - slope) <= 1e-9:
        if frac.denominator == 1:
            return str(frac.numerator)
        return f"{frac.numerator}/{frac.denominator}"
    return f"{slope:.6g}"


def _classify_kind(kind):
    if isinstance(kind, PathwiseBounds):
        return SolidityVerdict(
            Solidity.SOLID,
            "convex-order reductions never leave the closed interval spanned "
            "by the original support")
    if isinstance(kind, ExpectationConstraint):
        return SolidityVerdict(
            Solidity.SOLID, "convex-order reductions preserve the mean exactly")
    if isinstance(kind, OrliczBound):
        return SolidityVerdict(
            Solidity.SOLID,
            "expected convex penalties never increase under convex-order reduction")
    if isinstance(kind, RiskCeiling):
        if cx_consistency_flag(kind.measure) is Consistency.CONSISTENT:
            return SolidityVerdict(
                Solidity.SOLID,
                f"ceiling on {kind.measure.describe()}, which never increases "
                "under convex-order reduction")
        return SolidityVerdict(
            Solidity.NOT_SOLID,
            f"ceiling on {kind.measure.describe()}, which is not convex-order "
            "consistent; a reduction can raise the quantile")
    if isinstance(kind, RiskFloor):
        if cx_consistency_flag(kind.measure) is Consistency.CONSISTENT:
            return SolidityVerdict(
                Solidity.NOT_SOLID,
                f"floor on {kind.measure.describe()}; convex-order reductions "
                "can push a consistent measure below any floor above the mean")
        return SolidityVerdict(
            Solidity.UNKNOWN,
            f"floor on {kind.measure.describe()} is outside the certified grammar")
    if isinstance(kind, IdiosyncraticRetention):
        return SolidityVerdict(
            Solidity.NOT_SOLID,
            "couples a share to a variable that is not a function of the "
            "aggregate; conditioning on the aggregate breaks the tie")
    # AggregateEnvelope: certified breakable when the upper envelope rises
    # faster than the aggregate between adjacent breakpoints
    xs = [p[0] for p in kind.upper]
    ys = [p[1] for p in kind.upper]
    worst = None
    for k in range(len(xs) - 1):
        slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        if worst is None or slope > worst:
            worst = slope
    if worst is not None and worst > 1.0 + ENVELOPE_SLOPE_TOL:
        return SolidityVerdict(
            Solidity.NOT_SOLID,
            f"upper envelope rises with slope {_format_slope(worst)} > 1 between "
            "adjacent aggregate states, so rearranging mass across states can "
            "breach it")
    return SolidityVerdict(
        Solidity.UNKNOWN,
        "aggregate envelopes are not certified solid; no upper segment has "
        "slope above one")


def classify_constraint(constraint):
    """Per-member verdict; see classify_solidity for the set-level meet."""
    if isinstance(constraint, Constraint):
        return _classify_kind(constraint.kind)
    return _classify_kind(constraint)


def classify_solidity(constraints):
    """Meet of the member verdicts: Solid only if every member is certified,
    NotSolid as soon as one member is certified breakable."""
    verdicts = [classify_constraint(c) for c in constraints]
    if not verdicts:
        return SolidityVerdict(Solidity.SOLID, "empty constraint set restricts nothing")
    status = min((v.status for v in verdicts), key=_MEET_RANK.get)
    if status is Solidity.SOLID:
        return SolidityVerdict(status, "every member is certified solid")
    for idx, v in enumerate(verdicts):
        if v.status is status:
            return SolidityVerdict(status, f"constraint {idx}: {v.reason}")
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class SolidityWitness:
    """Feasible allocation plus an infeasible componentwise convex-order
    reduction of it, with the search stage that produced it."""

    feasible: Allocation
    reduction: Allocation
    method: str


def _verify_witness(X, Y, constraints, tol):
    ok, _ = check_clearing(Y)
    if not ok:
        return False
    feasible, _ = check_feasible(Y, constraints, tol)
    if feasible:
        return False
    for orig, red in zip(X.shares, Y.shares):
        if not convex_order_leq(red, orig):
            return False
    return True


def _feasible_seed(constraints, space, S):
    n = 0
    for c in constraints:
        if c.scope is not None:
            n = max(n, c.scope + 1)
    n = max(n, 2)
    candidates = []
    retained = {}
    for c in constraints:
        if isinstance(c.kind, IdiosyncraticRetention) and c.scope is not None:
            retained[c.scope] = c.kind.endowment
    if retained:
        free = [i for i in range(n) if i not in retained]
        residual = S.values - sum(z.values for z in retained.values())
        values = []
        for i in range(n):
            if i in retained:
                values.append(retained[i].values.copy())
            else:
                values.append(residual / len(free))
        # with no free agent this is pure autarky; the clearing filter
        # below rejects it unless the endowments already sum to S
        candidates.append(values)
    candidates.append([S.values / n for _ in range(n)])
    for values in candidates:
        shares = tuple(RandomVariable(space, v) for v in values)
        A = Allocation(space, shares, S)
        ok, _ = check_clearing(A)
        if not ok:
            continue
        feasible, _ = check_feasible(A, constraints)
        if feasible:
            return A
    return None


def falsify_solidity(constraints, space, S, budget=10 ** 4, seed=0, start=None):
    """Seeded search for a solidity counterexample.

    Tries, in order: the comonotonic improvement of the start allocation,
    plain conditioning on the aggregate, then up to ``budget`` randomized
    paired no-crossing transfers (chained, reset every FALSIFY_CHAIN_LIMIT
    steps).  Returns a verified SolidityWitness or None; None is absence of
    evidence, not a proof.
    """
    X = start if start is not None else _feasible_seed(constraints, space, S)
    if X is None:
        return None
    ok, _ = check_clearing(X)
    if not ok:
        raise ValidationError("start allocation must clear the aggregate")
    feasible, _ = check_feasible(X, constraints)
    if not feasible:
        raise ValidationError("start allocation must be feasible")

    improved, _cert = comonotonic_improvement(X)
    if _verify_witness(X, improved, constraints, FEASIBILITY_TOL):
        return SolidityWitness(X, improved, "comonotonic improvement")
    conditioned = condition_on_aggregate(X)
    if _verify_witness(X, conditioned, constraints, FEASIBILITY_TOL):
        return SolidityWitness(X, conditioned, "aggregate conditioning")

    n = X.n_agents
    m = space.size
    if n < 2 or m < 2:
        return None
    rng = np.random.default_rng(seed)
    probs = space.probs
    base = [share.values.copy() for share in X.shares]
    values = [v.copy() for v in base]
    chain = 0
    for _ in range(budget):
        if chain >= FALSIFY_CHAIN_LIMIT:
            values = [v.copy() for v in base]
            chain = 0
        i, j = (int(k) for k in rng.choice(n, size=2, replace=False))
        a, b = (int(k) for k in rng.choice(m, size=2, replace=False))
        gap_i = values[i][a] - values[i][b]
        gap_j = values[j][b] - values[j][a]
        if gap_i <= FALSIFY_GAP_EPS or gap_j <= FALSIFY_GAP_EPS:
            continue
        p_a, p_b = float(probs[a]), float(probs[b])
        # no-crossing cap keeps the step a contraction for both agents
        cap = min(gap_i, gap_j) * p_b / (p_a + p_b)
        down = cap * rng.uniform(0.25, 1.0)
        up = down * p_a / p_b
        values[i][a] -= down
        values[i][b] += up
        values[j][a] += down
        values[j][b] -= up
        chain += 1
        candidate = Allocation(
            space, tuple(RandomVariable(space, v.copy()) for v in values), S)
        if _verify_witness(X, candidate, constraints, FEASIBILITY_TOL):
            return SolidityWitness(X, candidate, "paired transfers")
    return None
