"""Finite atomic probability spaces, random variables, and a Gamma(2,1) adapter.

Everything downstream (orders, risk measures, allocations, oracles) runs on
:class:`FiniteSpace` and :class:`RandomVariable`.  The only continuous object
in the library is :class:`GammaAggregate`, the aggregate-loss distribution of
the two-agent value-at-risk scenario, which is handled analytically and via
:func:`discretize_gamma`.

Conventions fixed here and used throughout:

* quantiles are *lower* quantiles, ``inf{x : P(X <= x) >= u}``;
* cumulative-probability comparisons tolerate ``1e-12`` of float drift, so
  atom probabilities like ``0.9925 + 0.0025`` still reach a ``0.995`` level;
* values closer than ``1e-12`` are merged when a distribution is extracted.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, RefinementError, ValidationError

PROB_SUM_TOL = 1e-12
VALUE_MERGE_TOL = 1e-12
CUM_PROB_TOL = 1e-12
GAMMA_ROOT_TOL = 1e-10
REFINEMENT_DENOMINATOR_CAP = 10 ** 6


class FiniteSpace:
    """Ordered finite probability space with labelled atoms.

    Atoms are ``(label, prob)`` pairs; labels must be unique, probabilities
    strictly positive and summing to one within ``1e-12``.  Instances are
    immutable after construction and safe to share across threads.
    """

    __slots__ = ("labels", "probs")

    def __init__(self, atoms):
        atoms = list(atoms)
        if not atoms:
            raise ValidationError("a space needs at least one atom")
        labels = tuple(str(label) for label, _ in atoms)
        if len(set(labels)) != len(labels):
            raise ValidationError("atom labels must be unique")
        probs = np.array([float(p) for _, p in atoms], dtype=float)
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0.0):
            raise ValidationError("atom probabilities must be finite and strictly positive")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"atom probabilities sum to {total!r}, expected 1 within 1e-12")
        probs.setflags(write=False)
        self.labels = labels
        self.probs = probs

    @classmethod
    def uniform(cls, n, prefix="w"):
        """n equally likely atoms labelled prefix+index."""
        if n < 1:
            raise ValidationError("need at least one atom")
        return cls((f"{prefix}{k}", 1.0 / n) for k in range(n))

    @property
    def size(self):
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.labels, self.probs.tobytes()))

    def __repr__(self):
        inner = ", ".join(f"({lbl!r}, {p:g})" for lbl, p in zip(self.labels, self.probs))
        return f"FiniteSpace([{inner}])"


class RandomVariable:
    """Real value per atom of a :class:`FiniteSpace`.

    Supports pointwise arithmetic against variables on the same space and
    against scalars, which keeps test and CLI code close to the underlying
    algebra of shares.
    """

    __slots__ = ("space", "values")

    def __init__(self, space, values):
        if not isinstance(space, FiniteSpace):
            raise ValidationError("space must be a FiniteSpace")
        values = np.array(values, dtype=float)
        if values.shape != (space.size,):
            raise ValidationError(
                f"values shape {values.shape} does not match atom count {space.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("values must all be finite")
        values.setflags(write=False)
        self.space = space
        self.values = values

    @classmethod
    def constant(cls, space, c):
        return cls(space, np.full(space.size, float(c)))

    def _binary(self, other, op):
        if isinstance(other, RandomVariable):
            if other.space != self.space:
                raise ValidationError("operands live on different spaces")
            return RandomVariable(self.space, op(self.values, other.values))
        return RandomVariable(self.space, op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b)

    def __neg__(self):
        return RandomVariable(self.space, -self.values)

    def __repr__(self):
        return f"RandomVariable({np.array2string(self.values, precision=6)})"


@dataclass(frozen=True)
class GammaAggregate:
    """Gamma(2,1) aggregate loss: cdf(q) = 1 - (1+q)e^{-q} on q >= 0."""

    shape: int = 2
    rate: int = 1

    def __post_init__(self):
        if self.shape != 2 or self.rate != 1:
            raise ValidationError("only the Gamma(2,1) aggregate is supported")

    def cdf(self, q):
        if q <= 0.0:
            return 0.0
        return 1.0 - (1.0 + q) * math.exp(-q)

    def pdf(self, s):
        if s < 0.0:
            return 0.0
        return s * math.exp(-s)

    @property
    def mean(self):
        return 2.0

    @property
    def variance(self):
        return 2.0


def distribution_of(X):
    """Law of X as an ordered list of (value, prob) pairs.

    Values are strictly increasing; probabilities of values within 1e-12 of
    each other are merged.  Probabilities sum to one up to 1e-12.
    """
    order = np.argsort(X.values, kind="stable")
    vals = X.values[order]
    probs = X.space.probs[order]
    out = []
    for v, p in zip(vals, probs):
        if out and v - out[-1][0] <= VALUE_MERGE_TOL:
            out[-1][1] += p
        else:
            out.append([float(v), float(p)])
    return [(v, p) for v, p in out]


def quantile(X, u):
    """Lower u-quantile of X: inf{x : P(X <= x) >= u}."""
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile level must lie in (0,1), got {u!r}")
    cum = 0.0
    dist = distribution_of(X)
    for v, p in dist:
        cum += p
        if cum >= u - CUM_PROB_TOL:
            return v
    return dist[-1][0]


def moments(X):
    """Probability-weighted (mean, variance) of X; variance is never negative."""
    p = X.space.probs
    mean = float(p @ X.values)
    var = float(p @ (X.values - mean) ** 2)
    return mean, max(var, 0.0)


def gamma_quantile(g, u):
    """Root of cdf(q) = u by bracketed root finding, absolute tolerance 1e-10."""
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile level must lie in (0,1), got {u!r}")
    hi = 1.0
    while g.cdf(hi) <= u:
        hi *= 2.0
    return float(brentq(lambda q: g.cdf(q) - u, 0.0, hi, xtol=GAMMA_ROOT_TOL))


def discretize_gamma(g, n):
    """Equal-mass midpoint-quantile discretization of the Gamma(2,1) law.

    Atom k (k = 1..n) carries the quantile at level (k - 1/2)/n with
    probability 1/n.  Deterministic: no sampling involved.
    """
    if n < 2:
        raise DomainError("discretization needs at least 2 atoms")
    space = FiniteSpace.uniform(n, prefix="g")
    values = [gamma_quantile(g, (k - 0.5) / n) for k in range(1, n + 1)]
    return space, RandomVariable(space, values)


def equal_weight_refinement(space):
    """Refine a space into equal-probability atoms.

    Returns ``(refined_space, mapping)`` where ``mapping[j]`` is the index of
    the original atom that refined atom ``j`` came from.  Requires every
    probability to be a rational with denominator at most 10^6 (after exact
    recovery from its float representation); otherwise raises
    :class:`RefinementError` and callers fall back to mass-weighted transfers.
    """
    fracs = []
    for p in space.probs:
        f = Fraction(float(p)).limit_denominator(REFINEMENT_DENOMINATOR_CAP)
        if abs(float(f) - float(p)) > PROB_SUM_TOL:
            raise RefinementError(
                f"probability {float(p)!r} is not a rational with denominator <= 10^6"
            )
        fracs.append(f)
    if sum(fracs) != 1:
        raise RefinementError("rationalized probabilities do not sum to exactly 1")
    denom = 1
    for f in fracs:
        denom = denom * f.denominator // math.gcd(denom, f.denominator)
    if denom > REFINEMENT_DENOMINATOR_CAP:
        raise RefinementError(
            f"common denominator {denom} exceeds the 10^6 refinement cap"
        )
    counts = [int(f * denom) for f in fracs]
    mapping = np.repeat(np.arange(space.size), counts)
    atoms = []
    for old_idx, count in enumerate(counts):
        for j in range(count):
            atoms.append((f"{space.labels[old_idx]}#{j}", 1.0 / denom))
    return FiniteSpace(atoms), mapping


def push_forward(X, refined_space, mapping):
    """Carry a RandomVariable through an equal-weight refinement map.

    The pushed variable has exactly the same distribution as ``X``.
    """
    if X.space.size != int(mapping.max()) + 1:
        raise ValidationError("mapping does not cover the variable's space")
    return RandomVariable(refined_space, X.values[mapping])
