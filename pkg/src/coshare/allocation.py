"""Clearing allocations, comonotonicity tests, and comonotonic improvement.

The improvement runs in two phases.  Phase one replaces every share by its
conditional expectation given the level sets of the aggregate S, which is a
componentwise convex-order reduction and collapses the state space to the
support of S.  Phase two repairs monotonicity violations by mean-preserving
transfers between pairs of S-levels: whenever agent i decreases from level s
to level s' > s, a partner j with an increasing gap absorbs the move, so
clearing is preserved level by level.

Transfer sizing.  Write g_i = x_i(s) - x_i(s') > 0 for the violating gap and
g_j = x_j(s') - x_j(s) > 0 for the partner's gap.

* Equal level masses: both agents move by t = min(g_i, g_j / 2) on each
  level.  The violator's pair contracts or swaps outright (never widening,
  since t <= g_i), the partner's pair contracts without flipping its order
  (t <= g_j / 2), and the variance potential strictly decreases.  Capping at
  g_i rather than g_i / 2 lets the violator's two values trade places
  exactly, which is what removes the violation in one step instead of
  stalling at the midpoint.
* Unequal level masses: a mass-weighted no-crossing transfer with
  t = min(g_i, g_j), amounts a = t p' / (p + p') down at s and
  b = t p / (p + p') up at s' (so p a = p' b).  One of the two gaps closes
  exactly on every transfer.

Every executed transfer strictly decreases sum_i Var(X_i), the termination
witness; the run aborts with a diagnostic if the transfer cap is exceeded.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NonterminationError, ValidationError
from .probspace import RandomVariable, VALUE_MERGE_TOL, moments
from .riskmeasures import evaluate
from .stochorder import convex_order_leq

CLEARING_TOL = 1e-9
COMONOTONE_TOL = 1e-9
LEVEL_GAP_EPS = 1e-12
MAX_TRANSFERS = 10 ** 6


class Allocation:
    """n shares on one space, intended to clear an aggregate S.

    The aggregate defaults to the pathwise sum of the shares (which then
    clears by construction).  Pass it explicitly to represent candidate
    allocations whose clearing still needs checking.
    """

    __slots__ = ("space", "shares", "aggregate")

    def __init__(self, space, shares, aggregate=None):
        shares = tuple(shares)
        if not shares:
            raise ValidationError("an allocation needs at least one agent")
        for share in shares:
            if share.space != space:
                raise ValidationError("all shares must live on the allocation's space")
        if aggregate is None:
            total = np.zeros(space.size)
            for share in shares:
                total = total + share.values
            aggregate = RandomVariable(space, total)
        elif aggregate.space != space:
            raise ValidationError("aggregate must live on the allocation's space")
        self.space = space
        self.shares = shares
        self.aggregate = aggregate

    @property
    def n_agents(self):
        return len(self.shares)

    def share_matrix(self):
        return np.vstack([share.values for share in self.shares])


@dataclass(frozen=True)
class ImprovementCertificate:
    """Audit trail of one improvement run.

    convex_order_ok[i] certifies improved share i against the original in
    convex order; comonotonic_ok and clearing_residual describe the output;
    objective_deltas holds rho_i(improved) - rho_i(original) for measures
    supplied by the caller; transfers counts executed level-pair moves.
    """

    convex_order_ok: tuple
    comonotonic_ok: bool
    clearing_residual: float
    transfers: int
    objective_deltas: tuple = None

    @property
    def all_verified(self):
        return self.comonotonic_ok and all(self.convex_order_ok)


def check_clearing(A, tol=CLEARING_TOL):
    """(clears, worst atom residual) for sum_i X_i = S."""
    residual = float(np.max(np.abs(A.share_matrix().sum(axis=0) - A.aggregate.values)))
    return residual <= tol, residual


def _require_clearing(A):
    ok, residual = check_clearing(A)
    if not ok:
        raise ContractError(f"allocation does not clear its aggregate (residual {residual:g})")


def _level_partition(A):
    """Atoms grouped into S-level sets: (ordered atom-index lists, level S values)."""
    s = A.aggregate.values
    order = np.argsort(s, kind="stable")
    groups = []
    level_values = []
    for idx in order:
        if groups and s[idx] - level_values[-1] <= VALUE_MERGE_TOL:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])
            level_values.append(float(s[idx]))
    return groups, level_values


def is_comonotonic(A, tol=COMONOTONE_TOL):
    """True iff every share is a nondecreasing function of the aggregate.

    Two requirements: (a) each share is constant on every level set of S
    within tol, and (b) across levels sorted by S, each share's level value
    is nondecreasing within tol.
    """
    _require_clearing(A)
    groups, _ = _level_partition(A)
    for share in A.shares:
        prev = None
        for group in groups:
            block = share.values[group]
            if block.max() - block.min() > tol:
                return False
            rep = float(block.mean())
            if prev is not None and rep < prev - tol:
                return False
            prev = rep
    return True


def condition_on_aggregate(A):
    """Replace each share by its conditional expectation given sigma(S).

    Idempotent on sigma(S)-measurable allocations; output clears S and each
    output share is a convex-order reduction of its input share.
    """
    _require_clearing(A)
    groups, _ = _level_partition(A)
    probs = A.space.probs
    new_values = [share.values.copy() for share in A.shares]
    for group in groups:
        mass = probs[group].sum()
        for i, share in enumerate(A.shares):
            block = share.values[group]
            if block.max() == block.min():
                continue  # already constant; p*v/p would cost an ulp
            new_values[i][group] = float(probs[group] @ block / mass)
    shares = tuple(RandomVariable(A.space, v) for v in new_values)
    return Allocation(A.space, shares, A.aggregate)


def comonotonic_improvement(A, measures=None, max_transfers=MAX_TRANSFERS):
    """Comonotonic allocation dominating A componentwise in convex order.

    Returns (improved allocation, certificate).  The output clears S, passes
    is_comonotonic at tolerance 1e-9, and every output share precedes its
    input share in convex order; the certificate records the verdicts.
    ``measures`` optionally supplies one RiskMeasureSpec per agent whose
    objective deltas are reported.
    """
    _require_clearing(A)
    if measures is not None and len(measures) != A.n_agents:
        raise ContractError("need one measure per agent")

    conditioned = condition_on_aggregate(A)
    groups, _ = _level_partition(conditioned)
    n = A.n_agents
    m = len(groups)
    masses = np.array([A.space.probs[g].sum() for g in groups])
    # level-value matrix: x[i, k] = share i on level k (constant after conditioning)
    x = np.array([[share.values[g[0]] for g in groups] for share in conditioned.shares])

    transfers = 0
    while True:
        changed = False
        for k in range(m):
            for l in range(k + 1, m):
                while True:
                    gaps = x[:, k] - x[:, l]
                    violators = np.nonzero(gaps > LEVEL_GAP_EPS)[0]
                    if violators.size == 0:
                        break
                    i = int(violators[0])
                    rising = -gaps
                    j = int(np.argmax(rising))
                    if rising[j] <= 0.0:
                        # no partner left: a real breach unless the residual
                        # violation is below the comonotonicity tolerance
                        if gaps[i] > CLEARING_TOL:
                            raise ContractError(
                                "no transfer partner found; clearing must have been violated"
                            )
                        break
                    gap_i = float(gaps[i])
                    gap_j = float(rising[j])
                    p_k, p_l = float(masses[k]), float(masses[l])
                    if abs(p_k - p_l) <= LEVEL_GAP_EPS:
                        amount = min(gap_i, gap_j / 2.0)
                        down, up = amount, amount
                        # 2 p t (g - t) per agent with t <= g; positive for both
                        drop = 2.0 * p_k * amount * (gap_i + gap_j - 2.0 * amount)
                    else:
                        amount = min(gap_i, gap_j)
                        down = amount * p_l / (p_k + p_l)
                        up = amount * p_k / (p_k + p_l)
                        moved = amount * p_k * p_l / (p_k + p_l)
                        drop = moved * (2.0 * gap_i - amount) + moved * (2.0 * gap_j - amount)
                    if drop <= 0.0:
                        raise NonterminationError(
                            "variance potential failed to decrease",
                            state={"levels": (k, l), "agents": (i, j), "transfers": transfers},
                        )
                    x[i, k] -= down
                    x[i, l] += up
                    x[j, k] += down
                    x[j, l] -= up
                    transfers += 1
                    changed = True
                    if transfers > max_transfers:
                        raise NonterminationError(
                            f"transfer cap {max_transfers} exceeded",
                            state={"level_values": x.copy(), "transfers": transfers},
                        )
        if not changed:
            break

    atom_values = np.empty((n, A.space.size))
    for k, g in enumerate(groups):
        atom_values[:, g] = x[:, k][:, None]
    improved = Allocation(
        A.space,
        tuple(RandomVariable(A.space, atom_values[i]) for i in range(n)),
        A.aggregate,
    )

    cx_ok = tuple(
        convex_order_leq(improved.shares[i], A.shares[i]) for i in range(n)
    )
    _, residual = check_clearing(improved)
    deltas = None
    if measures is not None:
        deltas = tuple(
            evaluate(spec, improved.shares[i]) - evaluate(spec, A.shares[i])
            for i, spec in enumerate(measures)
        )
    certificate = ImprovementCertificate(
        convex_order_ok=cx_ok,
        comonotonic_ok=is_comonotonic(improved),
        clearing_residual=residual,
        transfers=transfers,
        objective_deltas=deltas,
    )
    return improved, certificate
