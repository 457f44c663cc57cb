"""Brute-force minimizers over constrained allocations on small finite spaces.

Ground truth for the solvers: exhaustive enumeration of candidate share
values on a rational grid, with the last agent's share implied by clearing.
Grids are expected to include every rational value an optimum can sit on
(quarters and eighths in the worked examples), so reported minima are exact
grid points, not approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .allocation import COMONOTONE_TOL, Allocation
from .constraints import (
    AggregateEnvelope,
    Constraint,
    ExpectationConstraint,
    FEASIBILITY_TOL,
    IdiosyncraticRetention,
    OrliczBound,
    PathwiseBounds,
    RiskCeiling,
    RiskFloor,
    _check_envelope_coverage,
    _pl_eval,
)
from .errors import DomainError, InfeasibleError, ValidationError
from .probspace import CUM_PROB_TOL, RandomVariable, VALUE_MERGE_TOL
from .riskmeasures import (
    ES,
    EXPECTED_CONVEX_LOSS,
    MEAN_VARIANCE,
    RiskMeasureSpec,
    VAR,
    convex_ladder,
)

GRID_POINT_LIMIT = 2 * 10 ** 7
GRID_CELL_LIMIT = 6 * 10 ** 7
TIE_EPS = 1e-12


def _axis(lo, hi, step):
    lo, hi, step = float(lo), float(hi), float(step)
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(step)):
        raise ValidationError("grid ranges must be finite")
    if step <= 0.0:
        raise ValidationError("grid step must be positive")
    if hi < lo:
        raise ValidationError("grid range needs lo <= hi")
    span = (hi - lo) / step
    count = int(round(span))
    if abs(span - count) > 1e-6:
        raise ValidationError("grid range must span a whole number of steps")
    return np.linspace(lo, hi, count + 1)


@dataclass(frozen=True)
class ScalarFamily:
    """One-parameter family: free shares = base + a * direction with the
    scalar a swept over [lo, hi] in the given step."""

    base: tuple
    direction: tuple
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        base = tuple(tuple(float(v) for v in row) for row in self.base)
        direction = tuple(tuple(float(v) for v in row) for row in self.direction)
        if not base or len(base) != len(direction):
            raise ValidationError("family base and direction need matching agent rows")
        width = len(base[0])
        if any(len(r) != width for r in base) or any(len(r) != width for r in direction):
            raise ValidationError("family rows must all have the same atom count")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "step", float(self.step))
        _axis(self.lo, self.hi, self.step)


@dataclass(frozen=True)
class GridSpec:
    """Either per-agent-per-atom (lo, hi, step) ranges for the n-1 free
    agents, or a one-parameter ScalarFamily."""

    ranges: tuple = None
    family: ScalarFamily = None

    def __post_init__(self):
        if (self.ranges is None) == (self.family is None):
            raise ValidationError("GridSpec needs exactly one of ranges or family")
        if self.ranges is not None:
            ranges = tuple(
                tuple((float(l), float(h), float(s)) for (l, h, s) in agent)
                for agent in self.ranges
            )
            if not ranges or any(not agent for agent in ranges):
                raise ValidationError("ranges must list at least one agent and atom")
            width = len(ranges[0])
            if any(len(agent) != width for agent in ranges):
                raise ValidationError("every free agent needs one range per atom")
            for agent in ranges:
                for triple in agent:
                    _axis(*triple)
            object.__setattr__(self, "ranges", ranges)
        elif not isinstance(self.family, ScalarFamily):
            raise ValidationError("family must be a ScalarFamily")

    @classmethod
    def uniform(cls, n_free_agents, n_atoms, lo, hi, step):
        triple = (float(lo), float(hi), float(step))
        return cls(ranges=tuple(tuple(triple for _ in range(n_atoms))
                                for _ in range(n_free_agents)))

    @classmethod
    def from_family(cls, base, direction, lo, hi, step):
        return cls(family=ScalarFamily(base, direction, lo, hi, step))

    @property
    def n_free_agents(self):
        if self.family is not None:
            return len(self.family.base)
        return len(self.ranges)

    @property
    def n_atoms(self):
        if self.family is not None:
            return len(self.family.base[0])
        return len(self.ranges[0])


def _free_tensor(grid):
    """Candidate values for the free agents, shaped (points, free, atoms)."""
    if grid.family is not None:
        fam = grid.family
        a = _axis(fam.lo, fam.hi, fam.step)
        base = np.array(fam.base)
        direction = np.array(fam.direction)
        return base[None, :, :] + a[:, None, None] * direction[None, :, :]
    axes = [_axis(*triple) for agent in grid.ranges for triple in agent]
    points = 1
    for ax in axes:
        points *= len(ax)
    if points > GRID_POINT_LIMIT or points * len(axes) > GRID_CELL_LIMIT:
        raise DomainError(f"grid of {points} points exceeds the oracle size limit")
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.column_stack([g.reshape(-1) for g in mesh])
    return flat.reshape(points, grid.n_free_agents, grid.n_atoms)


def _measure_values(spec, V, probs):
    """spec evaluated on every row of V (points x atoms); matches the scalar
    evaluator up to cumulative-probability tolerance."""
    if spec.kind == MEAN_VARIANCE:
        mean = V @ probs
        second = (V * V) @ probs
        return mean + spec.delta * np.maximum(second - mean * mean, 0.0)
    if spec.kind == EXPECTED_CONVEX_LOSS:
        return convex_ladder(V, spec.ladder) @ probs
    order = np.argsort(V, axis=1, kind="stable")
    sv = np.take_along_axis(V, order, axis=1)
    sp = probs[order]
    cum = np.cumsum(sp, axis=1)
    if spec.kind == VAR:
        hit = cum >= spec.level - CUM_PROB_TOL
        hit[:, -1] = True
        idx = np.argmax(hit, axis=1)
        return np.take_along_axis(sv, idx[:, None], axis=1)[:, 0]
    weights = np.clip(cum - spec.level, 0.0, sp)
    return (weights * sv).sum(axis=1) / (1.0 - spec.level)


def _feasible_mask(tensors, s_values, probs, constraints, tol):
    n = len(tensors)
    mask = np.ones(tensors[0].shape[0], dtype=bool)
    for constraint in constraints:
        if not isinstance(constraint, Constraint):
            raise ValidationError("oracle expects Constraint instances")
        kind = constraint.kind
        for i in constraint.agents(n):
            V = tensors[i]
            if isinstance(kind, PathwiseBounds):
                mask &= (V >= kind.lower - tol).all(axis=1)
                mask &= (V <= kind.upper + tol).all(axis=1)
            elif isinstance(kind, ExpectationConstraint):
                mean = V @ probs
                if kind.relation == "<=":
                    mask &= mean <= kind.bound + tol
                elif kind.relation == ">=":
                    mask &= mean >= kind.bound - tol
                else:
                    mask &= np.abs(mean - kind.bound) <= tol
            elif isinstance(kind, OrliczBound):
                mask &= convex_ladder(V, kind.ladder) @ probs <= kind.bound + tol
            elif isinstance(kind, RiskCeiling):
                mask &= _measure_values(kind.measure, V, probs) <= kind.bound + tol
            elif isinstance(kind, RiskFloor):
                mask &= _measure_values(kind.measure, V, probs) >= kind.bound - tol
            elif isinstance(kind, IdiosyncraticRetention):
                z = kind.endowment.values
                low = z < kind.deductible - tol
                if low.any():
                    mask &= (np.abs(V[:, low] - z[low]) <= tol).all(axis=1)
                if (~low).any():
                    mask &= (V[:, ~low] >= kind.deductible - tol).all(axis=1)
            else:
                _check_envelope_coverage(kind, s_values)
                lo = _pl_eval(kind.lower, s_values)
                hi = _pl_eval(kind.upper, s_values)
                mask &= (V >= lo[None, :] - tol).all(axis=1)
                mask &= (V <= hi[None, :] + tol).all(axis=1)
    return mask


def _levels(s_values):
    order = np.argsort(s_values, kind="stable")
    groups = []
    for idx in order:
        if groups and s_values[idx] - s_values[groups[-1][0]] <= VALUE_MERGE_TOL:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])
    return groups


def _comonotone_mask(tensors, s_values, probs, tol=COMONOTONE_TOL):
    groups = _levels(s_values)
    mask = np.ones(tensors[0].shape[0], dtype=bool)
    for V in tensors:
        reps = []
        for g in groups:
            block = V[:, g]
            if len(g) > 1:
                mask &= (block.max(axis=1) - block.min(axis=1)) <= tol
            reps.append(block @ probs[g] / probs[g].sum())
        for k in range(len(reps) - 1):
            mask &= reps[k + 1] >= reps[k] - tol
    return mask


def _enumerate(space, S, objectives, constraints, grid, tol, comonotone):
    if not isinstance(S, RandomVariable) or S.space != space:
        raise ValidationError("aggregate S must be a RandomVariable on the given space")
    if grid.n_atoms != space.size:
        raise ValidationError("grid atom count must match the space")
    n = grid.n_free_agents + 1
    if len(objectives) != n:
        raise ValidationError(f"need one objective per agent ({n})")
    for spec in objectives:
        if not isinstance(spec, RiskMeasureSpec):
            raise ValidationError("objectives must be RiskMeasureSpec instances")
    free = _free_tensor(grid)
    tensors = [free[:, i, :] for i in range(n - 1)]
    tensors.append(S.values[None, :] - free.sum(axis=1))
    probs = space.probs
    mask = _feasible_mask(tensors, S.values, probs, constraints, tol)
    if comonotone:
        mask &= _comonotone_mask(tensors, S.values, probs)
    if not mask.any():
        raise InfeasibleError(
            "no feasible grid point",
            details={"points": int(free.shape[0]), "comonotone": comonotone},
        )
    values = np.zeros(free.shape[0])
    for i, spec in enumerate(objectives):
        values[mask] += _measure_values(spec, tensors[i][mask], probs)
    values[~mask] = np.inf
    vmin = float(values.min())
    # first grid point within float dust of the minimum: lexicographic
    # tie-break in grid order
    best = int(np.argmax(values <= vmin + TIE_EPS * (1.0 + abs(vmin))))
    shares = tuple(RandomVariable(space, tensors[i][best].copy()) for i in range(n))
    return Allocation(space, shares, S), float(values[best])


def grid_minimize(space, S, objectives, constraints, grid, tol=FEASIBILITY_TOL):
    """Exhaustive minimum of sum_i objectives[i](X_i) over the grid,
    subject to the constraints; clearing holds by construction."""
    return _enumerate(space, S, objectives, constraints, grid, tol, comonotone=False)


def comonotone_minimize(space, S, objectives, constraints, grid, tol=FEASIBILITY_TOL):
    """grid_minimize restricted to comonotonic allocations."""
    return _enumerate(space, S, objectives, constraints, grid, tol, comonotone=True)
