"""
Tests for functional families, their closed-form derivatives, the log-Laplace
solver and the exponential martingale built on it.
"""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import NegativeInput, TimeOutOfRange
from functionals import (
    CylindricalPath,
    CylindricalState,
    ExpOuter,
    LinearCombination,
    LinearOuter,
    PowerOuter,
    ProductOuter,
    SliceFunctional,
    TimeWeightedOuter,
    as_functional,
    constant_state,
    exp_martingale_functional,
    exp_martingale_state,
    exp_state,
    linear_state,
    mean_laplace_functional,
    product_path_functional,
    require_nonnegative,
    running_integral_functional,
    sample_bounds,
    solve_log_laplace,
    write_solution_csv,
)
from measure import FiniteMeasure, FourierField, apply_generator, eval_field, pair, parse_field
from pathspace import (
    numeric_horizontal_derivative,
    numeric_vertical_derivative,
    stop,
)
from simulator import SimParams

points = st.floats(min_value=0.0, max_value=1.0, exclude_max=True)


def _numeric_grad(outer, t, y, h=1e-6):
    grad = np.zeros(y.size)
    for i in range(y.size):
        step = np.zeros(y.size)
        step[i] = h
        grad[i] = (outer.value(t, y + step) - outer.value(t, y - step)) / (2 * h)
    return grad


@pytest.fixture(scope="module")
def solution():
    return solve_log_laplace(parse_field("const:1+cos:1:0.5"), T=1.0, c=1.0)


class TestOuterFunctions:

    @pytest.mark.parametrize("outer", [
        LinearOuter([1.0, -2.0], offset=0.5),
        ExpOuter([1.0, 0.5]),
        ProductOuter(),
        TimeWeightedOuter(ExpOuter([0.3, 1.0]), rate=0.7),
    ])
    def test_gradient_and_hessian_match_differences(self, outer):
        t, y = 0.4, np.array([0.8, 1.3])
        assert np.allclose(outer.grad(t, y), _numeric_grad(outer, t, y), atol=1e-7)
        for i in range(2):
            step = np.zeros(2)
            step[i] = 1e-5
            column = (outer.grad(t, y + step) - outer.grad(t, y - step)) / 2e-5
            assert np.allclose(outer.hess(t, y)[:, i], column, atol=1e-6)
            slab = (outer.hess(t, y + step) - outer.hess(t, y - step)) / 2e-5
            assert np.allclose(outer.third(t, y)[:, :, i], slab, atol=1e-6)

    @pytest.mark.parametrize("power", [1, 2, 3, 4])
    def test_power_partials(self, power):
        outer = PowerOuter(power)
        y = np.array([1.7])
        assert outer.value(0, y) == pytest.approx(1.7 ** power)
        assert outer.grad(0, y)[0] == pytest.approx(power * 1.7 ** (power - 1))
        assert outer.hess(0, y)[0, 0] == pytest.approx(power * (power - 1) * 1.7 ** max(power - 2, 0))
        assert outer.third(0, y)[0, 0, 0] == pytest.approx(math.perm(power, 3) * 1.7 ** max(power - 3, 0))

    def test_power_rejects_bad_exponent(self):
        with pytest.raises(ValueError):
            PowerOuter(0)
        with pytest.raises(ValueError):
            PowerOuter(1.5)

    def test_time_weighting_has_a_time_derivative(self):
        outer = TimeWeightedOuter(ExpOuter([1.0]), rate=2.0)
        y = np.array([0.5])
        numeric = (outer.value(0.3 + 1e-6, y) - outer.value(0.3 - 1e-6, y)) / 2e-6
        assert outer.dt(0.3, y) == pytest.approx(numeric, rel=1e-6)


class TestCylindricalState:

    def test_arity_is_checked(self):
        with pytest.raises(ValueError):
            CylindricalState(ExpOuter([1.0, 1.0]), [FourierField.cosine(1)])

    def test_linear_reduction(self, random_measure):
        phi = parse_field("const:1+cos:2:0.5")
        F = linear_state(phi)
        mu = random_measure(1)
        assert F.value(0.0, mu) == pytest.approx(pair(mu, phi))
        assert F.vertical_field(0.0, mu) == phi
        assert F.generator_vertical_field(0.0, mu) == apply_generator(phi)
        assert F.vertical2(0.0, mu, 0.1, 0.2) == 0.0
        assert F.horizontal(0.0, mu) == 0.0

    def test_constant_state(self, random_measure):
        F = constant_state(3.0)
        assert F.value(0.2, random_measure(2)) == 3.0
        assert F.is_martingale

    @pytest.mark.parametrize("x", [0.05, 0.4, 0.83])
    def test_analytic_vertical_matches_numeric(self, small_path, x):
        state = CylindricalState(ExpOuter([1.0, 0.5]), [parse_field("const:1+cos:1:0.5"), parse_field("const:0.5+sin:2:0.25")])
        F = SliceFunctional(state)
        sp = stop(small_path, 0.5)
        assert F.vertical(sp, x) == pytest.approx(numeric_vertical_derivative(F, sp, x), abs=1e-6)

    @given(x=points, y=points)
    @settings(max_examples=30, deadline=None)
    def test_second_derivative_is_symmetric(self, random_measure, x, y):
        mu = random_measure(4)
        square = CylindricalState(PowerOuter(2), [parse_field("cos:1+sin:3:0.5")])
        mixed = CylindricalState(ExpOuter([1.0, -0.5]), [parse_field("const:0.3+cos:1"), parse_field("sin:2:0.7")])
        for state in (square, mixed):
            assert state.vertical2(0.0, mu, x, y) == state.vertical2(0.0, mu, y, x)

    def test_diagonal_field_agrees_with_pointwise_second_derivative(self, random_measure):
        state = CylindricalState(ExpOuter([1.0, -0.5]), [parse_field("const:1+cos:1"), parse_field("sin:2")])
        mu = random_measure(5)
        diagonal = state.vertical2_diagonal_field(0.0, mu)
        for x in (0.0, 0.21, 0.6):
            assert eval_field(diagonal, x) == pytest.approx(state.vertical2(0.0, mu, x, x), abs=1e-12)

    def test_exp_third_derivative(self, random_measure):
        phi = parse_field("const:1+cos:1:0.5")
        state = exp_state(phi)
        mu = random_measure(6)
        x, y, z = 0.1, 0.3, 0.7
        expected = -eval_field(phi, x) * eval_field(phi, y) * eval_field(phi, z) * state.value(0.0, mu)
        assert state.vertical3(0.0, mu, x, y, z) == pytest.approx(expected, abs=1e-12)

    def test_time_weighted_state(self, random_measure):
        state = CylindricalState(TimeWeightedOuter(ExpOuter([1.0]), rate=1.0), [FourierField.constant(1.0)])
        mu = random_measure(7)
        assert state.horizontal(0.5, mu) == pytest.approx(state.value(0.5, mu))


class TestPathFunctionals:

    def test_running_integral(self, small_path, one):
        F = running_integral_functional(one)
        sp = stop(small_path, 0.5)
        assert F.evaluate(sp) == pytest.approx(small_path.running_integral(one)[32])
        assert F.vertical_field(sp) == FourierField.zero()
        assert F.analytic

    def test_path_product_derivatives(self, small_path, cos1, one):
        F = product_path_functional(cos1, one)
        sp = stop(small_path, 0.75)
        integral = sp.running_integral(one)
        assert F.vertical(sp, 0.2) == pytest.approx(integral * eval_field(cos1, 0.2))
        assert F.horizontal(sp) == pytest.approx(pair(sp.current, cos1) * sp.current.total_mass)
        assert F.horizontal(sp) == pytest.approx(numeric_horizontal_derivative(F, sp), abs=1e-10)
        assert F.vertical2(sp, 0.1, 0.2) == 0.0

    @given(x=points, y=points)
    @settings(max_examples=30, deadline=None)
    def test_second_derivative_is_symmetric(self, small_path, x, y):
        F = CylindricalPath(ExpOuter([1.0, -0.5]), parse_field("const:0.2+cos:1:0.4+sin:2:-0.3"), parse_field("cos:1"))
        sp = stop(small_path, 0.5)
        assert F.vertical2(sp, x, y) == F.vertical2(sp, y, x)

    def test_path_outer_takes_two_arguments(self, cos1, one):
        with pytest.raises(ValueError):
            CylindricalPath(ExpOuter([1.0]), cos1, one)

    def test_linear_combination(self, small_path, cos1, one):
        F = running_integral_functional(one)
        G = SliceFunctional(exp_state(parse_field("const:1")))
        H = LinearCombination(2.0, F, -3.0, G)
        sp = stop(small_path, 0.5)
        assert H.evaluate(sp) == pytest.approx(2 * F.evaluate(sp) - 3 * G.evaluate(sp))
        assert H.vertical(sp, 0.3) == pytest.approx(2 * F.vertical(sp, 0.3) - 3 * G.vertical(sp, 0.3))
        assert H.horizontal(sp) == pytest.approx(2 * F.horizontal(sp) - 3 * G.horizontal(sp))
        assert H.analytic
        assert not H.is_martingale

    def test_as_functional_wraps_states(self):
        F = as_functional(exp_state(FourierField.constant(1.0)))
        assert isinstance(F, SliceFunctional)
        assert as_functional(F) is F


class TestLogLaplaceSolver:

    def test_constant_field_follows_riccati(self):
        sol = solve_log_laplace(FourierField.constant(2.0), T=1.0, c=1.0)
        # u(T) = phi / (1 + c phi T / 2)
        assert sol.u(1.0).a0 == pytest.approx(1.0, abs=1e-8)
        assert sol.u(0.5).a0 == pytest.approx(2.0 / 1.5, abs=1e-8)
        assert np.allclose(sol.u(1.0).a, 0.0)

    def test_heat_flow_without_branching(self):
        phi = parse_field("const:1+cos:1:0.5")
        sol = solve_log_laplace(phi, T=0.1, c=0.0, n_steps=64)
        u = sol.u(0.1)
        assert u.a0 == pytest.approx(1.0, abs=1e-14)
        assert u.a[0] == pytest.approx(0.5 * math.exp(-2 * math.pi ** 2 * 0.1), rel=1e-10)

    def test_zero_stays_zero(self):
        sol = solve_log_laplace(FourierField.zero(), T=1.0, c=1.0, n_steps=32)
        assert np.all(sol.coeffs == 0.0)

    def test_initial_slice_is_phi(self, solution):
        assert solution.u(0.0) == parse_field("const:1+cos:1:0.5").padded(solution.n_modes)

    def test_negative_input_is_rejected(self):
        with pytest.raises(NegativeInput):
            solve_log_laplace(FourierField.cosine(1), T=1.0, c=1.0)
        with pytest.raises(NegativeInput):
            require_nonnegative(parse_field("const:0.2+cos:1"))

    def test_too_many_modes_is_rejected(self):
        with pytest.raises(ValueError):
            solve_log_laplace(parse_field("const:2+cos:5:0.1"), T=1.0, c=1.0, n_modes=4)

    def test_solution_decays_and_stays_nonnegative(self, solution):
        assert solution.sup_norm() <= 1.5 + 1e-12
        grid = np.linspace(0, 1, 257)
        assert np.min(eval_field(solution.u(1.0), grid)) >= 0.0

    def test_interpolation_between_slices(self, solution):
        s = 0.5 + 0.25 / solution.n_steps
        left, right = solution.u(0.5), solution.u(0.5 + 1.0 / solution.n_steps)
        assert solution.u(s).a0 == pytest.approx(0.75 * left.a0 + 0.25 * right.a0)

    @pytest.mark.parametrize("s", [-0.5, 1.5])
    def test_times_outside_horizon(self, solution, s):
        with pytest.raises(TimeOutOfRange):
            solution.u(s)

    def test_solution_csv(self, tmp_path):
        sol = solve_log_laplace(FourierField.constant(2.0), T=1.0, c=1.0, n_steps=8, n_modes=2)
        write_solution_csv(sol, tmp_path / "u.csv")
        with open(tmp_path / "u.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["s", "a0", "a1", "a2", "b1", "b2"]
        assert len(rows) == 10
        assert float(rows[-1][1]) == pytest.approx(1.0, abs=1e-4)


class TestExpMartingale:

    def test_terminal_value(self, solution, random_measure):
        G = exp_martingale_state(solution)
        mu = random_measure(8)
        assert G.value(1.0, mu) == pytest.approx(math.exp(-pair(mu, solution.phi)), abs=1e-12)

    def test_zero_measure_gives_one(self, solution):
        assert exp_martingale_state(solution).value(0.3, FiniteMeasure.zero()) == 1.0

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.75])
    def test_drift_cancels_pointwise(self, solution, random_measure, t):
        G = exp_martingale_state(solution)
        mu = random_measure(9, n_atoms=40, mass=1.5)
        drift = (
            G.horizontal(t, mu)
            + pair(mu, G.generator_vertical_field(t, mu))
            + 0.5 * solution.c * pair(mu, G.vertical2_diagonal_field(t, mu))
        )
        assert drift == pytest.approx(0.0, abs=1e-8)

    def test_flagged_as_martingale(self, solution):
        F = exp_martingale_functional(solution)
        assert F.is_martingale
        assert F.analytic
        assert not SliceFunctional(exp_state(FourierField.constant(1.0))).is_martingale

    def test_bounds(self, solution, small_paths):
        F = exp_martingale_functional(solution)
        stopped = [stop(path, t) for path in small_paths for t in (0.0, 0.5, 1.0)]
        bounds = sample_bounds(F, stopped, [0.0, 0.25, 0.5])
        assert 0.0 < bounds.f_min <= bounds.f_max <= 1.0
        assert bounds.samples == len(stopped)
        assert bounds.vertical_max <= solution.sup_norm() + 1e-12

    def test_bounds_need_samples(self, solution):
        with pytest.raises(ValueError):
            sample_bounds(exp_martingale_functional(solution), [], [0.0])


class TestLaplaceFunctional:

    def test_zero_field_gives_one(self):
        params = SimParams(n_particles=50, dt=1 / 16, seed=11)
        assert mean_laplace_functional(params, FourierField.zero(), 3) == 1.0

    def test_negative_field_is_rejected(self):
        params = SimParams(n_particles=50, dt=1 / 16)
        with pytest.raises(NegativeInput):
            mean_laplace_functional(params, FourierField.sine(1), 3)

    def test_mean_lies_in_unit_interval(self):
        params = SimParams(n_particles=50, dt=1 / 16, seed=11)
        value = mean_laplace_functional(params, FourierField.constant(2.0), 5)
        assert 0.0 < value <= 1.0
