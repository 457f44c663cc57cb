"""Finite spaces, distributions, quantiles, and the Gamma(2,1) adapter."""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from coshare import (
    DomainError,
    FiniteSpace,
    GammaAggregate,
    RandomVariable,
    RefinementError,
    ValidationError,
    discretize_gamma,
    distribution_of,
    equal_weight_refinement,
    gamma_quantile,
    moments,
    push_forward,
    quantile,
)


def make_space(probs, prefix="w"):
    return FiniteSpace((f"{prefix}{k}", p) for k, p in enumerate(probs))


class TestFiniteSpace:
    def test_atoms_and_probs(self):
        sp = make_space((0.2, 0.3, 0.5))
        assert sp.labels == ("w0", "w1", "w2")
        assert np.allclose(sp.probs, (0.2, 0.3, 0.5))
        assert sp.size == 3 and len(sp) == 3

    def test_uniform(self):
        sp = FiniteSpace.uniform(4)
        assert np.allclose(sp.probs, 0.25)
        with pytest.raises(ValidationError):
            FiniteSpace.uniform(0)

    def test_rejects_bad_probabilities(self):
        with pytest.raises(ValidationError):
            make_space(())
        with pytest.raises(ValidationError):
            make_space((0.5, 0.6))
        with pytest.raises(ValidationError):
            make_space((1.2, -0.2))
        with pytest.raises(ValidationError):
            make_space((0.5, 0.0, 0.5))
        with pytest.raises(ValidationError):
            FiniteSpace((("a", 0.5), ("a", 0.5)))

    def test_fraction_probs_accepted(self):
        sp = make_space((Fraction(1, 3),) * 3)
        assert abs(float(sp.probs.sum()) - 1.0) <= 1e-12

    def test_probs_are_immutable(self):
        sp = make_space((0.5, 0.5))
        with pytest.raises(ValueError):
            sp.probs[0] = 0.9

    def test_equality_and_hash(self):
        a = make_space((0.5, 0.5))
        b = make_space((0.5, 0.5))
        assert a == b and hash(a) == hash(b)
        assert a != make_space((0.4, 0.6))


class TestRandomVariable:
    def test_shape_and_finiteness(self):
        sp = make_space((0.5, 0.5))
        with pytest.raises(ValidationError):
            RandomVariable(sp, (1.0,))
        with pytest.raises(ValidationError):
            RandomVariable(sp, (1.0, math.inf))
        with pytest.raises(ValidationError):
            RandomVariable("not a space", (1.0, 2.0))

    def test_arithmetic(self):
        sp = make_space((0.5, 0.5))
        X = RandomVariable(sp, (1.0, 2.0))
        Y = RandomVariable(sp, (3.0, 5.0))
        assert np.array_equal((X + Y).values, (4.0, 7.0))
        assert np.array_equal((Y - X).values, (2.0, 3.0))
        assert np.array_equal((2 * X).values, (2.0, 4.0))
        assert np.array_equal((X / 2).values, (0.5, 1.0))
        assert np.array_equal((-X).values, (-1.0, -2.0))
        assert np.array_equal((1 + X).values, (2.0, 3.0))
        assert np.array_equal((5 - X).values, (4.0, 3.0))

    def test_cross_space_arithmetic_rejected(self):
        X = RandomVariable(make_space((0.5, 0.5)), (1.0, 2.0))
        Y = RandomVariable(make_space((0.4, 0.6)), (1.0, 2.0))
        with pytest.raises(ValidationError):
            X + Y

    def test_constant(self):
        sp = make_space((0.25,) * 4)
        assert np.array_equal(RandomVariable.constant(sp, 3).values, [3.0] * 4)


class TestDistribution:
    def test_sorted_and_merged(self):
        sp = make_space((0.2, 0.3, 0.5))
        X = RandomVariable(sp, (2.0, 1.0, 2.0))
        assert distribution_of(X) == [(1.0, 0.3), (2.0, pytest.approx(0.7))]

    def test_merge_tolerance(self):
        sp = make_space((0.5, 0.5))
        close = RandomVariable(sp, (1.0, 1.0 + 5e-13))
        assert len(distribution_of(close)) == 1
        apart = RandomVariable(sp, (1.0, 1.0 + 1e-9))
        assert len(distribution_of(apart)) == 2

    def test_mass_conserved(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 7))
            p = rng.dirichlet(np.ones(n))
            p = p / p.sum()
            sp = make_space(p)
            X = RandomVariable(sp, rng.normal(size=n))
            dist = distribution_of(X)
            assert abs(sum(q for _, q in dist) - 1.0) <= 1e-12
            vals = [v for v, _ in dist]
            assert vals == sorted(vals)


class TestQuantile:
    # lower quantile inf{x : P(X <= x) >= u} on (1,2,3) w.p. (0.2,0.3,0.5)
    def setup_method(self):
        self.X = RandomVariable(make_space((0.2, 0.3, 0.5)), (1.0, 2.0, 3.0))

    def test_boundary_levels(self):
        assert quantile(self.X, 0.1) == 1.0
        assert quantile(self.X, 0.2) == 1.0  # cum hits the level exactly
        assert quantile(self.X, 0.2 + 1e-13) == 1.0  # within 1e-12 slack
        assert quantile(self.X, 0.21) == 2.0
        assert quantile(self.X, 0.5) == 2.0
        assert quantile(self.X, 0.500001) == 3.0
        assert quantile(self.X, 0.999) == 3.0

    def test_domain(self):
        for u in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DomainError):
                quantile(self.X, u)


def test_moments_hand_case():
    X = RandomVariable(make_space((0.2, 0.3, 0.5)), (1.0, 2.0, 3.0))
    mean, var = moments(X)
    assert mean == pytest.approx(2.3, abs=1e-15)
    assert var == pytest.approx(0.61, abs=1e-12)
    const = RandomVariable(make_space((0.5, 0.5)), (4.0, 4.0))
    assert moments(const) == (4.0, 0.0)


class TestGamma:
    def test_cdf_pdf(self):
        g = GammaAggregate()
        assert g.cdf(0.0) == 0.0 and g.cdf(-1.0) == 0.0
        assert g.cdf(50.0) == pytest.approx(1.0, abs=1e-12)
        assert g.pdf(-0.5) == 0.0
        assert g.pdf(1.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
        assert g.mean == 2.0 and g.variance == 2.0
        with pytest.raises(ValidationError):
            GammaAggregate(shape=3)

    def test_quantile_inverts_cdf(self):
        g = GammaAggregate()
        for u in (0.01, 0.25, 0.5, 0.9, 0.95, 0.995):
            q = gamma_quantile(g, u)
            assert g.cdf(q) == pytest.approx(u, abs=1e-9)
            assert q == pytest.approx(stats.gamma.ppf(u, 2), abs=1e-8)
        with pytest.raises(DomainError):
            gamma_quantile(g, 1.0)

    def test_var95_value(self):
        # 1 - (1+q)e^{-q} = 0.95 at q ~ 4.7439
        assert gamma_quantile(GammaAggregate(), 0.95) == pytest.approx(
            4.7439, abs=1e-3)

    def test_discretization(self):
        g = GammaAggregate()
        sp, X = discretize_gamma(g, 400)
        assert sp.size == 400
        assert np.allclose(sp.probs, 1.0 / 400)
        assert np.all(np.diff(X.values) > 0)
        mean, var = moments(X)
        assert mean == pytest.approx(2.0, abs=0.01)
        assert var == pytest.approx(2.0, abs=0.1)
        with pytest.raises(DomainError):
            discretize_gamma(g, 1)


class TestRefinement:
    def test_quarters(self):
        sp = make_space((0.25, 0.75))
        refined, mapping = equal_weight_refinement(sp)
        assert refined.size == 4
        assert np.allclose(refined.probs, 0.25)
        assert list(mapping) == [0, 1, 1, 1]

    def test_thirds_recovered_from_floats(self):
        sp = make_space((Fraction(1, 3),) * 3)
        refined, mapping = equal_weight_refinement(sp)
        assert refined.size == 3
        assert list(mapping) == [0, 1, 2]

    def test_push_forward_preserves_law(self, rng):
        for _ in range(20):
            weights = rng.choice([1, 1, 2, 3, 4], size=3)
            probs = weights / weights.sum()
            sp = make_space(probs)
            X = RandomVariable(sp, rng.normal(size=3))
            refined, mapping = equal_weight_refinement(sp)
            pushed = push_forward(X, refined, mapping)
            got, want = distribution_of(pushed), distribution_of(X)
            assert len(got) == len(want)
            for (gv, gp), (wv, wp) in zip(got, want):
                assert gv == pytest.approx(wv, abs=1e-12)
                assert gp == pytest.approx(wp, abs=1e-12)

    def test_dyadic_denominator_past_cap(self):
        p = 2.0 ** -21  # denominator 2^21 > 10^6
        sp = make_space((p, 1.0 - p))
        with pytest.raises(RefinementError):
            equal_weight_refinement(sp)

    def test_push_forward_mapping_mismatch(self):
        sp = make_space((0.25, 0.75))
        refined, mapping = equal_weight_refinement(sp)
        Y = RandomVariable(make_space((0.5, 0.25, 0.25)), (1.0, 2.0, 3.0))
        with pytest.raises(ValidationError):
            push_forward(Y, refined, mapping)
