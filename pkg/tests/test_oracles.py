"""Tests for the Feller closed forms and the 1-D Euler cross-check."""

import math

import numpy as np
import pytest

from errors import InvalidParams
from oracles import (
    feller_comparison,
    feller_extinction_probability,
    feller_laplace,
    feller_mean,
    feller_variance,
    riccati_solution,
    simulate_feller,
)


class TestClosedForms:

    def test_unit_parameters(self):
        assert feller_mean(1.0) == 1.0
        assert feller_variance(1.0, 1.0, 1.0) == 1.0
        assert feller_extinction_probability(1.0, 1.0, 1.0) == pytest.approx(0.1353352832366127)
        assert feller_laplace(1.0, 2.0, 1.0, 1.0) == pytest.approx(math.exp(-1.0))

    def test_riccati_solution(self):
        assert riccati_solution(2.0, 1.0, 1.0) == pytest.approx(1.0)
        assert riccati_solution(2.0, 0.0, 5.0) == 2.0

    def test_laplace_is_exp_of_riccati(self):
        for lam in (0.5, 2.0, 7.0):
            expected = math.exp(-1.5 * riccati_solution(lam, 2.0, 0.7))
            assert feller_laplace(1.5, lam, 2.0, 0.7) == pytest.approx(expected)

    def test_laplace_tends_to_extinction_probability(self):
        limit = feller_laplace(1.0, 1e9, 1.0, 1.0)
        assert limit == pytest.approx(feller_extinction_probability(1.0, 1.0, 1.0), rel=1e-6)

    def test_no_branching_never_dies(self):
        assert feller_extinction_probability(1.0, 0.0, 1.0) == 0.0
        assert feller_laplace(1.0, 2.0, 0.0, 1.0) == pytest.approx(math.exp(-2.0))


class TestEulerCrossCheck:

    def test_rejects_bad_parameters(self):
        with pytest.raises(InvalidParams):
            simulate_feller(0.0, 1.0, 1.0, 0.01, 10)
        with pytest.raises(InvalidParams):
            simulate_feller(1.0, -1.0, 1.0, 0.01, 10)

    def test_without_branching_mass_is_frozen(self):
        sample = simulate_feller(1.0, 0.0, 1.0, 1 / 64, 100)
        assert np.all(sample.finals == 1.0)
        assert sample.extinction_frequency == 0.0

    def test_deterministic_per_seed(self):
        a = simulate_feller(1.0, 1.0, 1.0, 1 / 64, 200, seed=9)
        b = simulate_feller(1.0, 1.0, 1.0, 1 / 64, 200, seed=9)
        assert np.array_equal(a.finals, b.finals)

    def test_moments_match_closed_forms(self):
        sample = simulate_feller(1.0, 1.0, 1.0, 1 / 256, 4000, seed=1)
        se = math.sqrt(feller_variance(1.0, 1.0, 1.0) / sample.n_paths)
        assert abs(sample.finals.mean() - 1.0) <= 4 * se
        assert sample.extinction_frequency == pytest.approx(math.exp(-2.0), abs=0.03)
        assert np.all(sample.finals >= 0.0)

    def test_comparison_record(self):
        comparison = feller_comparison(1.0, 1.0, 1.0, 1 / 64, 500, seed=4)
        data = comparison.to_dict()
        assert data["mean_exact"] == 1.0
        assert data["variance_exact"] == 1.0
        assert data["laplace_exact"] == pytest.approx(math.exp(-1.0))
        assert 0.0 <= data["extinction_sde"] <= 1.0
        assert data["extinction_se"] > 0.0
