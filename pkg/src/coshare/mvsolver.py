"""Mean-variance risk sharing with box caps.

Machinery: the unconstrained proportional rule, the capped optimum via a
statewise shadow price (exact piecewise-linear inversion of the clipped
aggregate response) together with a damped fixed point on the intercepts,
zero-intercept saturation curves in exact rational arithmetic, the two-agent
intercept fixed-point interval, and the two-agent value-at-risk ceiling
scenario on a Gamma(2,1) aggregate with closed-form piecewise moments.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral

import numpy as np
from scipy.optimize import minimize_scalar

from .allocation import Allocation
from .errors import (
    ContractError,
    ConvergenceError,
    DomainError,
    InfeasibleError,
    ValidationError,
)
from .probspace import (
    FiniteSpace,
    GammaAggregate,
    RandomVariable,
    distribution_of,
    gamma_quantile,
    moments,
)

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITERS = 10 ** 4
FIXED_POINT_DAMPING = 0.5
PROJECTION_CLEAR_TOL = 1e-9
RESIDUAL_ZERO_TOL = 1e-12


def _positive_deltas(delta):
    out = tuple(float(d) for d in delta)
    if not out:
        raise ValidationError("need at least one agent")
    if any(d <= 0.0 or not math.isfinite(d) for d in out):
        raise DomainError("every variance weight must be positive and finite")
    return out


def unconstrained_shares(delta):
    """Proportional slopes a_i = (1/delta_i) / sum_j (1/delta_j).

    Integer or Fraction inputs give exact Fractions; floats give floats.
    """
    if not delta:
        raise ValidationError("need at least one agent")
    exact = all(isinstance(d, (Integral, Fraction)) and not isinstance(d, bool)
                for d in delta)
    if exact:
        weights = [Fraction(1, 1) / Fraction(d) for d in delta]
        if any(Fraction(d) <= 0 for d in delta):
            raise DomainError("every variance weight must be positive")
        total = sum(weights)
        return tuple(w / total for w in weights)
    deltas = _positive_deltas(delta)
    weights = [1.0 / d for d in deltas]
    total = sum(weights)
    return tuple(w / total for w in weights)


def _extended_sum(values):
    if any(v == -math.inf for v in values):
        return -math.inf
    if any(v == math.inf for v in values):
        return math.inf
    return math.fsum(values)


def statewise_projection(c, delta, lower, upper, s):
    """Shadow price eta and shares x_i = clip(c_i + eta/delta_i, L_i, U_i)
    with sum x_i = s.

    The clipped response H(eta) = sum_i clip(c_i + eta/delta_i, L_i, U_i) is
    nondecreasing and piecewise linear with kinks where a clip activates;
    eta is found by exact inversion over the sorted kink set, taking the
    midpoint of the solution interval when H is flat at level s.
    """
    deltas = _positive_deltas(delta)
    n = len(deltas)
    c = tuple(float(v) for v in c)
    lower = tuple(float(v) for v in lower)
    upper = tuple(float(v) for v in upper)
    if not (len(c) == len(lower) == len(upper) == n):
        raise ValidationError("c, delta, lower, upper must have equal length")
    if any(l >= u for l, u in zip(lower, upper)):
        raise ValidationError("caps need lower < upper for every agent")
    s = float(s)
    total_lower = _extended_sum(lower)
    total_upper = _extended_sum(upper)
    if s < total_lower - 1e-12 or s > total_upper + 1e-12:
        raise InfeasibleError(
            f"s = {s:g} outside the feasible cap range [{total_lower:g}, {total_upper:g}]")

    inv = np.array([1.0 / d for d in deltas])
    c_arr = np.array(c)
    lo_arr = np.array(lower)
    up_arr = np.array(upper)

    def H(eta):
        return float(np.clip(c_arr + eta * inv, lo_arr, up_arr).sum())

    kinks = []
    for i in range(n):
        if math.isfinite(lower[i]):
            kinks.append(deltas[i] * (lower[i] - c[i]))
        if math.isfinite(upper[i]):
            kinks.append(deltas[i] * (upper[i] - c[i]))
    kinks = sorted(set(kinks))

    if not kinks:
        eta = (s - c_arr.sum()) / inv.sum()
    else:
        h_vals = [H(k) for k in kinks]
        idx_lo = bisect.bisect_left(h_vals, s)
        idx_hi = bisect.bisect_right(h_vals, s)
        if idx_lo < idx_hi:
            # s sits exactly on kink levels: midpoint of the flat kink run
            eta = 0.5 * (kinks[idx_lo] + kinks[idx_hi - 1])
        elif idx_lo == 0:
            # below the first kink: agents with infinite lower caps drive H
            slope = float(inv[lo_arr == -math.inf].sum())
            if slope <= 0.0:
                eta = kinks[0]  # flat tail; finite endpoint of the interval
            else:
                eta = kinks[0] - (h_vals[0] - s) / slope
        elif idx_lo == len(kinks):
            slope = float(inv[up_arr == math.inf].sum())
            if slope <= 0.0:
                eta = kinks[-1]
            else:
                eta = kinks[-1] + (s - h_vals[-1]) / slope
        else:
            k_a, k_b = kinks[idx_lo - 1], kinks[idx_lo]
            h_a, h_b = h_vals[idx_lo - 1], h_vals[idx_lo]
            if h_b > h_a:
                eta = k_a + (s - h_a) * (k_b - k_a) / (h_b - h_a)
            else:
                eta = 0.5 * (k_a + k_b)

    shares = np.clip(c_arr + eta * inv, lo_arr, up_arr)
    residual = s - float(shares.sum())
    if residual != 0.0:
        # exact clearing: hand the float dust to an agent strictly inside
        # its box
        margin = max(2.0 * abs(residual), 1e-12)
        fixed = False
        for i in range(n):
            if shares[i] - margin > lower[i] and shares[i] + margin < upper[i]:
                shares[i] += residual
                fixed = True
                break
        if not fixed and abs(residual) > PROJECTION_CLEAR_TOL:
            raise ContractError(
                f"projection residual {residual:g} with every agent at a cap")
    return float(eta), shares


@dataclass(frozen=True)
class MVProblem:
    """Variance weights, box caps, and an aggregate: either a finite
    (space, S) pair or a GammaAggregate."""

    delta: tuple
    lower: tuple
    upper: tuple
    aggregate: object

    def __post_init__(self):
        deltas = _positive_deltas(self.delta)
        object.__setattr__(self, "delta", deltas)
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if not (len(lower) == len(upper) == len(deltas)):
            raise ValidationError("delta, lower, upper must have equal length")
        if any(l >= u for l, u in zip(lower, upper)):
            raise ValidationError("caps need lower < upper for every agent")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if isinstance(self.aggregate, GammaAggregate):
            s_min, s_max = 0.0, math.inf
        else:
            try:
                space, S = self.aggregate
            except (TypeError, ValueError):
                raise ValidationError(
                    "aggregate must be a (FiniteSpace, RandomVariable) pair "
                    "or a GammaAggregate")
            if not isinstance(space, FiniteSpace) or not isinstance(S, RandomVariable):
                raise ValidationError(
                    "aggregate must be a (FiniteSpace, RandomVariable) pair "
                    "or a GammaAggregate")
            if S.space != space:
                raise ValidationError("aggregate S must live on the given space")
            s_min, s_max = float(S.values.min()), float(S.values.max())
        if _extended_sum(lower) > s_min + 1e-12:
            raise ValidationError("sum of lower caps exceeds the smallest aggregate value")
        if _extended_sum(upper) < s_max - 1e-12:
            raise ValidationError("sum of upper caps is below the largest aggregate value")

    @property
    def n_agents(self):
        return len(self.delta)

    @property
    def is_finite(self):
        return not isinstance(self.aggregate, GammaAggregate)


@dataclass(frozen=True)
class RegimeReport:
    """Piecewise-affine share curves: breakpoints in s, the active set and
    per-agent slope in each regime, anchor share vectors at the breakpoints,
    the intercepts, and the intercept fixed-point residual.

    Regime r covers s between breakpoints r-1 and r; there is one more
    regime than breakpoints.  anchors holds (s, shares) pairs; with no
    breakpoints a single reference anchor is stored.
    """

    breakpoints: tuple
    active_sets: tuple
    slopes: tuple
    intercepts: tuple
    residual: float = 0.0
    anchors: tuple = ()
    terminal_s: object = None

    def __post_init__(self):
        k = len(self.breakpoints)
        if len(self.active_sets) != k + 1 or len(self.slopes) != k + 1:
            raise ValidationError("need one regime more than breakpoints")
        if len(self.anchors) != max(k, 1):
            raise ValidationError("need an anchor per breakpoint (or one reference)")

    @property
    def n_agents(self):
        return len(self.intercepts)

    def share_at(self, agent, s):
        """Exact piecewise-linear evaluation of one agent's curve."""
        bps = self.breakpoints
        if not bps:
            s0, shares0 = self.anchors[0]
            return shares0[agent] + self.slopes[0][agent] * (s - s0)
        r = bisect.bisect_left(bps, s)
        if r == 0:
            s0, shares0 = self.anchors[0]
            return shares0[agent] + self.slopes[0][agent] * (s - s0)
        s0, shares0 = self.anchors[r - 1]
        return shares0[agent] + self.slopes[r][agent] * (s - s0)


def _regimes_from_intercepts(c, deltas, lower, upper, residual):
    n = len(deltas)
    kinks = []
    for i in range(n):
        if math.isfinite(lower[i]):
            kinks.append(deltas[i] * (lower[i] - c[i]))
        if math.isfinite(upper[i]):
            kinks.append(deltas[i] * (upper[i] - c[i]))
    kinks = sorted(set(kinks))

    def H(eta):
        return float(sum(min(upper[i], max(lower[i], c[i] + eta / deltas[i]))
                         for i in range(n)))

    def active_at(eta):
        return tuple(i for i in range(n)
                     if lower[i] < c[i] + eta / deltas[i] < upper[i])

    def slopes_for(active):
        total = sum(1.0 / deltas[i] for i in active)
        if total <= 0.0:
            return tuple(0.0 for _ in range(n))
        return tuple((1.0 / deltas[i]) / total if i in active else 0.0
                     for i in range(n))

    if not kinks:
        active = tuple(range(n))
        anchor_s = float(sum(c))
        anchor_shares = tuple(c)
        return RegimeReport(
            breakpoints=(), active_sets=(active,), slopes=(slopes_for(active),),
            intercepts=tuple(c), residual=residual,
            anchors=((anchor_s, anchor_shares),))

    probes = [kinks[0] - 1.0]
    for a, b in zip(kinks, kinks[1:]):
        probes.append(0.5 * (a + b))
    probes.append(kinks[-1] + 1.0)
    active_sets = tuple(active_at(eta) for eta in probes)
    slopes = tuple(slopes_for(a) for a in active_sets)
    breakpoints = tuple(H(k) for k in kinks)
    anchors = tuple(
        (H(k), tuple(min(upper[i], max(lower[i], c[i] + k / deltas[i]))
                     for i in range(n)))
        for k in kinks)
    return RegimeReport(
        breakpoints=breakpoints, active_sets=active_sets, slopes=slopes,
        intercepts=tuple(c), residual=residual, anchors=anchors)


def solve_capped_mv(problem):
    """Capped mean-variance optimum on a finite aggregate.

    Shares take the truncated-affine form X_i = clip(c_i + eta(S)/delta_i,
    L_i, U_i) where eta(s) is the statewise shadow price; the intercepts
    satisfy c_i = E[X_i] and are found by damped fixed-point iteration.
    Returns (Allocation, RegimeReport).
    """
    if not isinstance(problem, MVProblem):
        raise ValidationError("solve_capped_mv needs an MVProblem")
    if not problem.is_finite:
        raise ValidationError("solve_capped_mv needs a finite aggregate; "
                              "the gamma scenario has its own entry point")
    space, S = problem.aggregate
    deltas = problem.delta
    n = problem.n_agents
    probs = space.probs
    support = S.values
    mean_s = float(support @ probs)
    slopes = unconstrained_shares(deltas)
    c = np.array([float(a) * mean_s for a in slopes])

    residual = math.inf
    for _ in range(FIXED_POINT_MAX_ITERS):
        shares = np.empty((n, space.size))
        for k, s in enumerate(support):
            _, x = statewise_projection(c, deltas, problem.lower, problem.upper, s)
            shares[:, k] = x
        target = shares @ probs
        residual = float(np.max(np.abs(target - c)))
        if residual < FIXED_POINT_TOL:
            c = target
            break
        c = (1.0 - FIXED_POINT_DAMPING) * c + FIXED_POINT_DAMPING * target
    else:
        raise ConvergenceError(
            "intercept fixed point did not converge",
            last_iterate=tuple(c), residual=residual)

    shares = np.empty((n, space.size))
    for k, s in enumerate(support):
        _, x = statewise_projection(c, deltas, problem.lower, problem.upper, s)
        shares[:, k] = x
    allocation = Allocation(
        space, tuple(RandomVariable(space, shares[i].copy()) for i in range(n)), S)
    report = _regimes_from_intercepts(
        tuple(float(v) for v in c), deltas, problem.lower, problem.upper, residual)
    return allocation, report


def mv_objective(delta, allocation):
    """sum_i E[X_i] + delta_i Var(X_i)."""
    deltas = _positive_deltas(delta)
    if len(deltas) != allocation.n_agents:
        raise ValidationError("one variance weight per agent")
    total = 0.0
    for d, share in zip(deltas, allocation.shares):
        mean, variance = moments(share)
        total += mean + d * variance
    return total


def two_agent_fixed_point(a, C, S):
    """All intercepts beta with beta = E[clip(a S + beta, 0, C)] - a E[S].

    The residual is continuous, nonincreasing, and piecewise linear in beta;
    the solution set is a closed interval, returned as (beta_minus,
    beta_plus) with both endpoints solving the fixed point within 1e-10.
    """
    a = float(a)
    C = float(C)
    if not 0.0 < a < 1.0:
        raise DomainError("slope a must lie strictly between 0 and 1")
    if C <= 0.0:
        raise DomainError("cap C must be positive")
    dist = distribution_of(S)
    values = np.array([v for v, _ in dist])
    probs = np.array([p for _, p in dist])
    mean_term = a * float(values @ probs)

    def residual(beta):
        return float(np.clip(a * values + beta, 0.0, C) @ probs) - mean_term - beta

    kinks = sorted({-a * v for v in values} | {C - a * v for v in values})
    r_vals = [residual(k) for k in kinks]
    tol = RESIDUAL_ZERO_TOL

    if all(r > tol for r in r_vals):
        # root right of the last kink, where the residual has slope -1
        beta = kinks[-1] + r_vals[-1]
        return beta, beta
    if all(r < -tol for r in r_vals):
        beta = kinks[0] + r_vals[0]
        return beta, beta

    j0 = next(i for i, r in enumerate(r_vals) if r <= tol)
    if r_vals[j0] < -tol:
        # strict sign change: unique root on a strictly decreasing segment
        if j0 == 0:
            beta = kinks[0] + r_vals[0]
        else:
            r_a, r_b = r_vals[j0 - 1], r_vals[j0]
            k_a, k_b = kinks[j0 - 1], kinks[j0]
            beta = k_a + r_a * (k_b - k_a) / (r_a - r_b)
        return beta, beta

    if j0 == 0:
        beta_minus = kinks[0] + r_vals[0]
    else:
        r_a = r_vals[j0 - 1]
        k_a, k_b = kinks[j0 - 1], kinks[j0]
        r_b = r_vals[j0]
        if r_a > tol:
            beta_minus = k_a + r_a * (k_b - k_a) / (r_a - r_b) if r_a != r_b else k_b
        else:
            beta_minus = k_a
    j1 = j0
    while j1 + 1 < len(kinks) and r_vals[j1 + 1] >= -tol:
        j1 += 1
    if j1 == len(kinks) - 1:
        beta_plus = kinks[-1] + r_vals[-1]
    else:
        r_a, r_b = r_vals[j1], r_vals[j1 + 1]
        k_a, k_b = kinks[j1], kinks[j1 + 1]
        beta_plus = k_a + r_a * (k_b - k_a) / (r_a - r_b)
    return beta_minus, beta_plus


def _as_fraction(x, name):
    if isinstance(x, (Integral, Fraction)) and not isinstance(x, bool):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValidationError(f"{name} must be finite")
        return Fraction(x)
    raise ValidationError(f"{name} must be a real number")


def saturation_curve(delta, upper, intercepts=None):
    """Zero-intercept clipped quota-share curve in exact rational arithmetic.

    Agents share s proportionally until each hits its upper cap, after which
    the remaining agents re-share with renormalized slopes.  Returns a
    RegimeReport whose breakpoints, slopes, and anchors are Fractions when
    the inputs are rational; share_at then evaluates exactly.  With every
    cap finite the curve ends at sum(U), reported as terminal_s.
    """
    n = len(delta)
    if n == 0:
        raise ValidationError("need at least one agent")
    deltas = [_as_fraction(d, "delta") for d in delta]
    if any(d <= 0 for d in deltas):
        raise DomainError("every variance weight must be positive")
    if len(upper) != n:
        raise ValidationError("one upper cap per agent")
    caps = []
    for u in upper:
        if u == math.inf:
            caps.append(None)
        else:
            caps.append(_as_fraction(u, "upper cap"))
    if intercepts is None:
        c = [Fraction(0)] * n
    else:
        if len(intercepts) != n:
            raise ValidationError("one intercept per agent")
        c = [_as_fraction(v, "intercept") for v in intercepts]
    if any(cap is not None and cap <= ci for cap, ci in zip(caps, c)):
        raise ValidationError("every finite cap must exceed its intercept")

    inv = [Fraction(1, 1) / d for d in deltas]
    kink_pairs = sorted(
        (deltas[i] * (caps[i] - c[i]), i) for i in range(n) if caps[i] is not None)

    def value_at(eta):
        out = []
        for i in range(n):
            x = c[i] + eta * inv[i]
            if caps[i] is not None and x > caps[i]:
                x = caps[i]
            out.append(x)
        return tuple(out)

    def slopes_for(active):
        total = sum(inv[i] for i in active)
        if total == 0:
            return tuple(Fraction(0) for _ in range(n))
        return tuple(inv[i] / total if i in active else Fraction(0) for i in range(n))

    active = set(range(n))
    active_sets = [tuple(sorted(active))]
    slopes = [slopes_for(active)]
    breakpoints = []
    anchors = []
    for eta_k, agent in kink_pairs:
        shares = value_at(eta_k)
        s_k = sum(shares)
        if breakpoints and s_k == breakpoints[-1]:
            # simultaneous saturation: extend the previous breakpoint
            active.discard(agent)
            active_sets[-1] = tuple(sorted(active))
            slopes[-1] = slopes_for(active)
            continue
        breakpoints.append(s_k)
        anchors.append((s_k, shares))
        active.discard(agent)
        active_sets.append(tuple(sorted(active)))
        slopes.append(slopes_for(active))
    terminal = None
    if all(cap is not None for cap in caps):
        terminal = sum(caps)
    if not breakpoints:
        anchors = [(sum(c), tuple(c))]
    return RegimeReport(
        breakpoints=tuple(breakpoints), active_sets=tuple(active_sets),
        slopes=tuple(slopes), intercepts=tuple(c), residual=0.0,
        anchors=tuple(anchors), terminal_s=terminal)


# Gamma(2,1) partial moments: G_m(x) = integral_0^x t^m e^(-t) dt for the
# integer m needed by affine pieces (the density is s e^(-s), so the k-th
# partial power moment over [lo, hi] is G_{k+1}(hi) - G_{k+1}(lo)).

def _g1(x):
    if x == math.inf:
        return 1.0
    return 1.0 - math.exp(-x) * (1.0 + x)


def _g2(x):
    if x == math.inf:
        return 2.0
    return 2.0 - math.exp(-x) * (2.0 + 2.0 * x + x * x)


def _g3(x):
    if x == math.inf:
        return 6.0
    return 6.0 - math.exp(-x) * (6.0 + 6.0 * x + 3.0 * x * x + x ** 3)


def _piece_moments(lo, hi, u, v):
    """(E[h 1], E[h^2 1], E[s h 1]) over S in [lo, hi) for h(s) = u + v s."""
    i0 = _g1(hi) - _g1(lo)
    i1 = _g2(hi) - _g2(lo)
    i2 = _g3(hi) - _g3(lo)
    e = u * i0 + v * i1
    e2 = u * u * i0 + 2.0 * u * v * i1 + v * v * i2
    es = u * i1 + v * i2
    return e, e2, es


def _variance_pair(pieces):
    """(Var h(S), Var(S - h(S))) for a piecewise-affine h covering [0, inf)."""
    e = e2 = es = 0.0
    for lo, hi, u, v in pieces:
        de, de2, des = _piece_moments(lo, hi, u, v)
        e += de
        e2 += de2
        es += des
    var_h = e2 - e * e
    cov = es - 2.0 * e  # E[S] = 2
    var_rest = 2.0 + var_h - 2.0 * cov  # Var(S) = 2
    return var_h, var_rest


@dataclass(frozen=True)
class VarScenarioReport:
    """Two-agent mean-variance sharing of a Gamma(2,1) aggregate under
    X_i >= 0 and VaR ceilings, with agent 2 the variance-averse one.

    Carries the four objective values (unconstrained, constrained,
    comonotone-restricted, autarky), the optimal four-regime rule
    parameters, the comonotone family parameters, the jump sizes at q, and
    a non-comonotonicity witness straddling q.
    """

    delta: tuple
    var_level: float
    ceiling: float
    lam: float
    q: float
    m_star: float
    a: float
    r: float
    unconstrained: float
    constrained: float
    comonotone_restricted: float
    autarky: float
    com_params: tuple
    jump_agent1: float
    jump_agent2: float
    witness: tuple

    def constrained_shares(self, s):
        """(X_1, X_2) under the optimal four-regime rule; vectorized."""
        s = np.asarray(s, dtype=float)
        f = np.where(
            s <= self.a, s,
            np.where(s <= self.r, self.m_star + self.lam * s,
                     np.where(s <= self.q, s - self.ceiling,
                              self.m_star + self.lam * s)))
        return s - f, f

    def comonotone_shares(self, s):
        """(X_1, X_2) under the best comonotone rule found; vectorized."""
        s_c, k1, k2 = self.com_params
        s0 = s_c - self.ceiling / k1
        s = np.asarray(s, dtype=float)
        g = np.where(
            s <= s0, 0.0,
            np.where(s <= s_c, k1 * (s - s0),
                     np.where(s <= self.q, self.ceiling,
                              self.ceiling + k2 * (s - self.q))))
        return g, s - g


def _four_regime_pieces(m, lam, q, ceiling):
    one_minus = 1.0 - lam
    a = m / one_minus
    r = (ceiling + m) / one_minus
    return a, r, (
        (0.0, a, 0.0, 1.0),
        (a, r, m, lam),
        (r, q, -ceiling, 1.0),
        (q, math.inf, m, lam),
    )


def var_scenario(delta=(0.01, 1.0), var_level=0.95, ceiling=3.0):
    """The two-agent VaR-ceiling scenario on the Gamma(2,1) aggregate.

    Fixed-parameter reproduction: delta = (1/100, 1), level 0.95, ceiling 3.
    The optimal rule gives agent 2 the four-regime share f(S) and is
    discontinuous at q, the 0.95 quantile of the aggregate, so the optimum
    is not comonotonic; the comonotone-restricted value is strictly worse.
    """
    deltas = _positive_deltas(delta)
    if len(deltas) != 2:
        raise ValidationError("the scenario has exactly two agents")
    d1, d2 = deltas
    var_level = float(var_level)
    ceiling = float(ceiling)
    if not 0.0 < var_level < 1.0:
        raise DomainError("var level must lie in (0,1)")
    if ceiling <= 0.0:
        raise DomainError("ceiling must be positive")

    lam = d1 / (d1 + d2)
    gamma = GammaAggregate()
    q = gamma_quantile(gamma, var_level)

    # exact rational values where the inputs are exact: the proportional
    # optimum and autarky
    d1_frac = Fraction(1, 100) if abs(d1 - 0.01) < 1e-15 else Fraction(d1)
    d2_frac = Fraction(1) if d2 == 1.0 else Fraction(d2)
    lam_frac = d1_frac / (d1_frac + d2_frac)
    unconstrained = float(
        2 + 2 * (d1_frac * (1 - lam_frac) ** 2 + d2_frac * lam_frac ** 2))
    autarky = float(2 + d1_frac + d2_frac)

    def constrained_value(m):
        _, _, pieces = _four_regime_pieces(m, lam, q, ceiling)
        var_f, var_rest = _variance_pair(pieces)
        return 2.0 + d1 * var_rest + d2 * var_f

    m_hi = (1.0 - lam) * q - ceiling
    if m_hi <= 0.0:
        raise DomainError("ceiling too large for a four-regime rule")
    result = minimize_scalar(
        constrained_value, bounds=(1e-9, m_hi - 1e-9), method="bounded",
        options={"xatol": 1e-10})
    m_star = float(result.x)
    constrained = float(result.fun)
    a, r, _ = _four_regime_pieces(m_star, lam, q, ceiling)

    # comonotone family for agent 1: zero until s0, slope k1 up to the
    # ceiling at s_c <= q, flat at the ceiling until q, slope k2 after
    def com_value(s_c, k1, k2):
        s0 = s_c - ceiling / k1
        pieces = (
            (0.0, s0, 0.0, 0.0),
            (s0, s_c, -k1 * s0, k1),
            (s_c, q, ceiling, 0.0),
            (q, math.inf, ceiling - k2 * q, k2),
        )
        var_g, var_rest = _variance_pair(pieces)
        return 2.0 + d1 * var_g + d2 * var_rest

    def best_k2(s_c, k1):
        res = minimize_scalar(
            lambda k2: com_value(s_c, k1, k2), bounds=(0.0, 1.0),
            method="bounded", options={"xatol": 1e-8})
        return float(res.x), float(res.fun)

    def best_k1(s_c):
        lo = ceiling / s_c
        res = minimize_scalar(
            lambda k1: best_k2(s_c, k1)[1], bounds=(lo, 1.0),
            method="bounded", options={"xatol": 1e-7})
        return float(res.x), best_k2(s_c, float(res.x))[1]

    outer = minimize_scalar(
        lambda s_c: best_k1(s_c)[1], bounds=(ceiling, q), method="bounded",
        options={"xatol": 1e-6})
    s_c = float(outer.x)
    k1 = best_k1(s_c)[0]
    k2, comonotone = best_k2(s_c, k1)

    f_left = q - ceiling
    f_right = m_star + lam * q
    x1_left = ceiling
    x1_right = (1.0 - lam) * q - m_star
    h = 1e-3
    s_lo, s_hi = q - h, q + h
    # agent 1 rises across q while agent 2 falls: the comonotonicity breach
    witness = (
        (s_lo, s_hi),
        (ceiling, (1.0 - lam) * s_hi - m_star),
        (s_lo - ceiling, m_star + lam * s_hi),
    )

    return VarScenarioReport(
        delta=(d1, d2), var_level=var_level, ceiling=ceiling, lam=lam, q=q,
        m_star=m_star, a=a, r=r, unconstrained=unconstrained,
        constrained=constrained, comonotone_restricted=comonotone,
        autarky=autarky, com_params=(s_c, k1, k2),
        jump_agent1=x1_right - x1_left, jump_agent2=f_right - f_left,
        witness=witness)
