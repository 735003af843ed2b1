"""
Functionals
Concrete functional families with analytic derivatives, and the spectral
log-Laplace solver behind the exponential martingale.

Two contracts live here. A StateFunctional F(t, mu) sees only the current
measure; a Functional F(t, omega) sees a StoppedPath. Derivatives are handed
out as FourierFields (x -> D_x F, x -> A D_x F, x -> D_xx F on the diagonal)
because that is what the Itô assembly integrates against the path.
SliceFunctional turns the first kind into the second.
"""

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from errors import NegativeInput, NonConvergence, TimeOutOfRange
from measure import (
    CirclePoint,
    FiniteMeasure,
    FourierField,
    apply_generator,
    collocation_grid,
    eval_field,
    generator_eigenvalues,
    pair,
)
from pathspace import StoppedPath
from simulator import SimParams, simulate_path


# ---------------------------------------------------------------------------
# Outer functions f(t, y_1..y_n)
# ---------------------------------------------------------------------------

class Outer(ABC):
    """Smooth scalar function of time and n pairings, with analytic partials."""

    n_args: int = 1

    @abstractmethod
    def value(self, t: float, y: np.ndarray) -> float:
        pass

    def dt(self, t: float, y: np.ndarray) -> float:
        return 0.0

    @abstractmethod
    def grad(self, t: float, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def hess(self, t: float, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def third(self, t: float, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def get_name(self) -> str:
        pass


class LinearOuter(Outer):
    """offset + sum_i w_i y_i."""

    def __init__(self, weights: Sequence[float], offset: float = 0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.offset = float(offset)
        self.n_args = int(self.weights.size)

    def value(self, t, y):
        return float(np.dot(self.weights, y)) + self.offset

    def grad(self, t, y):
        return self.weights.copy()

    def hess(self, t, y):
        return np.zeros((self.n_args, self.n_args))

    def third(self, t, y):
        return np.zeros((self.n_args,) * 3)

    def get_name(self) -> str:
        return "linear"


class ExpOuter(Outer):
    """exp(-sum_i w_i y_i)."""

    def __init__(self, weights: Sequence[float]):
        self.weights = np.asarray(weights, dtype=float)
        self.n_args = int(self.weights.size)

    def value(self, t, y):
        return math.exp(-float(np.dot(self.weights, y)))

    def grad(self, t, y):
        return -self.weights * self.value(t, y)

    def hess(self, t, y):
        return np.outer(self.weights, self.weights) * self.value(t, y)

    def third(self, t, y):
        w = self.weights
        return -np.einsum("i,j,k->ijk", w, w, w) * self.value(t, y)

    def get_name(self) -> str:
        return "exp"


class ProductOuter(Outer):
    """y_1 * y_2."""

    n_args = 2

    def value(self, t, y):
        return float(y[0] * y[1])

    def grad(self, t, y):
        return np.array([y[1], y[0]], dtype=float)

    def hess(self, t, y):
        return np.array([[0.0, 1.0], [1.0, 0.0]])

    def third(self, t, y):
        return np.zeros((2, 2, 2))

    def get_name(self) -> str:
        return "product"


class PowerOuter(Outer):
    """y^p for an integer p >= 1."""

    def __init__(self, power: int = 2):
        if int(power) != power or power < 1:
            raise ValueError(f"power must be a positive integer, got {power}")
        self.power = int(power)

    def _term(self, y: float, order: int) -> float:
        p = self.power
        if order > p:
            return 0.0
        return math.perm(p, order) * y ** (p - order)

    def value(self, t, y):
        return self._term(float(y[0]), 0)

    def grad(self, t, y):
        return np.array([self._term(float(y[0]), 1)])

    def hess(self, t, y):
        return np.array([[self._term(float(y[0]), 2)]])

    def third(self, t, y):
        return np.array([[[self._term(float(y[0]), 3)]]])

    def get_name(self) -> str:
        return f"power{self.power}"


class TimeWeightedOuter(Outer):
    """exp(rate * t) * inner(t, y); gives state functionals a time derivative."""

    def __init__(self, inner: Outer, rate: float = 1.0):
        self.inner = inner
        self.rate = float(rate)
        self.n_args = inner.n_args

    def _scale(self, t: float) -> float:
        return math.exp(self.rate * t)

    def value(self, t, y):
        return self._scale(t) * self.inner.value(t, y)

    def dt(self, t, y):
        return self._scale(t) * (self.rate * self.inner.value(t, y) + self.inner.dt(t, y))

    def grad(self, t, y):
        return self._scale(t) * self.inner.grad(t, y)

    def hess(self, t, y):
        return self._scale(t) * self.inner.hess(t, y)

    def third(self, t, y):
        return self._scale(t) * self.inner.third(t, y)

    def get_name(self) -> str:
        return f"timeweighted-{self.inner.get_name()}"


# ---------------------------------------------------------------------------
# Contracts
# ---------------------------------------------------------------------------

class StateFunctional(ABC):
    """
    F(t, mu) on [0, T] x M_F(E).

    Subclasses with closed-form derivatives set `analytic = True` and
    implement the field members; otherwise the calculus layer falls back to
    difference quotients.
    """

    analytic: bool = False
    is_martingale: bool = False

    @abstractmethod
    def value(self, t: float, mu: FiniteMeasure) -> float:
        pass

    @abstractmethod
    def get_name(self) -> str:
        pass

    def horizontal(self, t: float, mu: FiniteMeasure) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic time derivative")

    def vertical_field(self, t: float, mu: FiniteMeasure) -> FourierField:
        raise NotImplementedError(f"{self.get_name()} has no analytic vertical derivative")

    def generator_vertical_field(self, t: float, mu: FiniteMeasure) -> FourierField:
        return apply_generator(self.vertical_field(t, mu))

    def vertical2_diagonal_field(self, t: float, mu: FiniteMeasure) -> FourierField:
        raise NotImplementedError(f"{self.get_name()} has no analytic second derivative")

    def vertical2(self, t: float, mu: FiniteMeasure, x: CirclePoint, y: CirclePoint) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic second derivative")

    def vertical3(self, t: float, mu: FiniteMeasure, x: CirclePoint, y: CirclePoint, z: CirclePoint) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic third derivative")

    def vertical(self, t: float, mu: FiniteMeasure, x: CirclePoint) -> float:
        return eval_field(self.vertical_field(t, mu), x)

    def generator_vertical(self, t: float, mu: FiniteMeasure, x: CirclePoint) -> float:
        return eval_field(self.generator_vertical_field(t, mu), x)


class Functional(ABC):
    """
    F(t, omega) evaluated on stopped paths only, hence non-anticipative.

    The analytic_* flags say which derivative members are available; the
    others raise NotImplementedError and the calculus layer substitutes the
    pathspace difference quotients.
    """

    analytic_vertical: bool = False
    analytic_vertical2: bool = False
    analytic_horizontal: bool = False
    is_martingale: bool = False

    @abstractmethod
    def evaluate(self, sp: StoppedPath) -> float:
        pass

    @abstractmethod
    def get_name(self) -> str:
        pass

    @property
    def analytic(self) -> bool:
        return self.analytic_vertical and self.analytic_vertical2 and self.analytic_horizontal

    def horizontal(self, sp: StoppedPath) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic horizontal derivative")

    def vertical_field(self, sp: StoppedPath) -> FourierField:
        raise NotImplementedError(f"{self.get_name()} has no analytic vertical derivative")

    def generator_vertical_field(self, sp: StoppedPath) -> FourierField:
        return apply_generator(self.vertical_field(sp))

    def vertical2_diagonal_field(self, sp: StoppedPath) -> FourierField:
        raise NotImplementedError(f"{self.get_name()} has no analytic second derivative")

    def vertical2(self, sp: StoppedPath, x: CirclePoint, y: CirclePoint) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic second derivative")

    def vertical3(self, sp: StoppedPath, x: CirclePoint, y: CirclePoint, z: CirclePoint) -> float:
        raise NotImplementedError(f"{self.get_name()} has no analytic third derivative")

    def vertical(self, sp: StoppedPath, x: CirclePoint) -> float:
        return eval_field(self.vertical_field(sp), x)

    def generator_vertical(self, sp: StoppedPath, x: CirclePoint) -> float:
        return eval_field(self.generator_vertical_field(sp), x)


# ---------------------------------------------------------------------------
# Cylindrical families
# ---------------------------------------------------------------------------

def _coefficient_matrix(fields: Sequence[FourierField], n_modes: int) -> np.ndarray:
    if not fields:
        return np.zeros((0, 2 * n_modes + 1))
    return np.array([f.padded(n_modes).coeffs for f in fields])


def _field_from(coeffs: np.ndarray) -> FourierField:
    return FourierField.from_coeffs(coeffs)


class CylindricalState(StateFunctional):
    """
    Finitely based functional F(t, mu) = f(t, <mu, phi_1>, ..., <mu, phi_n>).

    D_x F = sum_i d_i f phi_i(x), D_xy F = sum_ij d_ij f phi_i(x) phi_j(y).
    Products phi_i phi_j are formed once, exactly, at construction.
    """

    analytic = True

    def __init__(self, outer: Outer, fields: Sequence[FourierField], martingale: bool = False, name: str = ""):
        if outer.n_args != len(fields):
            raise ValueError(f"outer function takes {outer.n_args} pairings, got {len(fields)} fields")
        self.outer = outer
        self.fields = tuple(fields)
        self.is_martingale = martingale
        self.name = name or f"cyl-{outer.get_name()}"

        k = max((f.n_modes for f in self.fields), default=0)
        self._phi = _coefficient_matrix(self.fields, k)
        self._a_phi = _coefficient_matrix([apply_generator(f) for f in self.fields], k)
        products = [[fi.multiply(fj) for fj in self.fields] for fi in self.fields]
        self._products = np.array(
            [[p.padded(2 * k).coeffs for p in row] for row in products]
        ).reshape(len(self.fields), len(self.fields), 4 * k + 1)

    def get_name(self) -> str:
        return self.name

    def pairings(self, mu: FiniteMeasure) -> np.ndarray:
        return np.array([pair(mu, f) for f in self.fields], dtype=float)

    def value(self, t, mu):
        return self.outer.value(t, self.pairings(mu))

    def horizontal(self, t, mu):
        return self.outer.dt(t, self.pairings(mu))

    def vertical_field(self, t, mu):
        return _field_from(self.outer.grad(t, self.pairings(mu)) @ self._phi)

    def generator_vertical_field(self, t, mu):
        return _field_from(self.outer.grad(t, self.pairings(mu)) @ self._a_phi)

    def vertical2_diagonal_field(self, t, mu):
        hess = self.outer.hess(t, self.pairings(mu))
        return _field_from(np.einsum("ij,ijc->c", hess, self._products))

    def _point_values(self, x: CirclePoint) -> np.ndarray:
        return np.array([eval_field(f, x) for f in self.fields], dtype=float)

    def vertical2(self, t, mu, x, y):
        hess = self.outer.hess(t, self.pairings(mu))
        a, b = self._point_values(x), self._point_values(y)
        # exact under x <-> y
        return 0.5 * float(a @ hess @ b + b @ hess @ a)

    def vertical3(self, t, mu, x, y, z):
        third = self.outer.third(t, self.pairings(mu))
        return float(np.einsum(
            "ijk,i,j,k->", third, self._point_values(x), self._point_values(y), self._point_values(z)
        ))


def linear_state(phi: FourierField) -> CylindricalState:
    """F(mu) = <mu, phi>."""
    return CylindricalState(LinearOuter([1.0]), [phi], name="linear")


def exp_state(phi: FourierField) -> CylindricalState:
    """F(mu) = exp(-<mu, phi>)."""
    return CylindricalState(ExpOuter([1.0]), [phi], name="exp")


def constant_state(value: float) -> CylindricalState:
    return CylindricalState(LinearOuter([], offset=value), [], martingale=True, name="constant")


class CylindricalPath(Functional):
    """
    F(t, omega) = g(t, <omega(t), phi>, int_0^t <omega(s), psi> ds).

    Only the first argument reacts to a vertical bump at t, so D_x F = g_y phi(x)
    and D* F = g_t + g_z <omega(t), psi>.
    """

    analytic_vertical = True
    analytic_vertical2 = True
    analytic_horizontal = True

    def __init__(self, outer: Outer, phi: FourierField, psi: FourierField, name: str = ""):
        if outer.n_args != 2:
            raise ValueError("path outer function must take (y, z)")
        self.outer = outer
        self.phi = phi
        self.psi = psi
        self.name = name or f"path-{outer.get_name()}"
        self._a_phi = apply_generator(phi)
        self._phi_squared = phi.multiply(phi)

    def get_name(self) -> str:
        return self.name

    def _args(self, sp: StoppedPath) -> np.ndarray:
        return np.array([pair(sp.tail, self.phi), sp.running_integral(self.psi)])

    def evaluate(self, sp):
        return self.outer.value(sp.t, self._args(sp))

    def horizontal(self, sp):
        args = self._args(sp)
        return self.outer.dt(sp.t, args) + float(self.outer.grad(sp.t, args)[1]) * pair(sp.tail, self.psi)

    def vertical_field(self, sp):
        return float(self.outer.grad(sp.t, self._args(sp))[0]) * self.phi

    def generator_vertical_field(self, sp):
        return float(self.outer.grad(sp.t, self._args(sp))[0]) * self._a_phi

    def vertical2_diagonal_field(self, sp):
        return float(self.outer.hess(sp.t, self._args(sp))[0, 0]) * self._phi_squared

    def vertical2(self, sp, x, y):
        h = float(self.outer.hess(sp.t, self._args(sp))[0, 0])
        return h * (eval_field(self.phi, x) * eval_field(self.phi, y))

    def vertical3(self, sp, x, y, z):
        third = float(self.outer.third(sp.t, self._args(sp))[0, 0, 0])
        return third * eval_field(self.phi, x) * eval_field(self.phi, y) * eval_field(self.phi, z)


def running_integral_functional(psi: FourierField) -> CylindricalPath:
    """F(t, omega) = int_0^t <omega(s), psi> ds; purely horizontal."""
    return CylindricalPath(LinearOuter([0.0, 1.0]), FourierField.zero(), psi, name="running-integral")


def product_path_functional(phi: FourierField, psi: FourierField) -> CylindricalPath:
    """F(t, omega) = <omega(t), phi> * int_0^t <omega(s), psi> ds."""
    return CylindricalPath(ProductOuter(), phi, psi, name="path-product")


class SliceFunctional(Functional):
    """F(t, omega) = G(t, omega(t)); every derivative is G's at the current state."""

    def __init__(self, state: StateFunctional):
        self.state = state
        self.analytic_vertical = state.analytic
        self.analytic_vertical2 = state.analytic
        self.analytic_horizontal = state.analytic
        self.is_martingale = state.is_martingale

    def get_name(self) -> str:
        return self.state.get_name()

    def evaluate(self, sp):
        return self.state.value(sp.t, sp.tail)

    def horizontal(self, sp):
        return self.state.horizontal(sp.t, sp.tail)

    def vertical_field(self, sp):
        return self.state.vertical_field(sp.t, sp.tail)

    def generator_vertical_field(self, sp):
        return self.state.generator_vertical_field(sp.t, sp.tail)

    def vertical2_diagonal_field(self, sp):
        return self.state.vertical2_diagonal_field(sp.t, sp.tail)

    def vertical2(self, sp, x, y):
        return self.state.vertical2(sp.t, sp.tail, x, y)

    def vertical3(self, sp, x, y, z):
        return self.state.vertical3(sp.t, sp.tail, x, y, z)


def as_functional(F: Union[Functional, StateFunctional]) -> Functional:
    return SliceFunctional(F) if isinstance(F, StateFunctional) else F


class LinearCombination(Functional):
    """alpha F + beta G, derivatives combined the same way."""

    def __init__(self, alpha: float, first: Functional, beta: float, second: Functional):
        self.alpha, self.beta = float(alpha), float(beta)
        self.first, self.second = as_functional(first), as_functional(second)
        self.analytic_vertical = self.first.analytic_vertical and self.second.analytic_vertical
        self.analytic_vertical2 = self.first.analytic_vertical2 and self.second.analytic_vertical2
        self.analytic_horizontal = self.first.analytic_horizontal and self.second.analytic_horizontal
        self.is_martingale = self.first.is_martingale and self.second.is_martingale

    def get_name(self) -> str:
        return f"{self.alpha:g}*{self.first.get_name()}+{self.beta:g}*{self.second.get_name()}"

    def _combine(self, a, b):
        return self.alpha * a + self.beta * b

    def evaluate(self, sp):
        return self._combine(self.first.evaluate(sp), self.second.evaluate(sp))

    def horizontal(self, sp):
        return self._combine(self.first.horizontal(sp), self.second.horizontal(sp))

    def vertical_field(self, sp):
        return self._combine(self.first.vertical_field(sp), self.second.vertical_field(sp))

    def generator_vertical_field(self, sp):
        return self._combine(self.first.generator_vertical_field(sp), self.second.generator_vertical_field(sp))

    def vertical2_diagonal_field(self, sp):
        return self._combine(self.first.vertical2_diagonal_field(sp), self.second.vertical2_diagonal_field(sp))

    def vertical2(self, sp, x, y):
        return self._combine(self.first.vertical2(sp, x, y), self.second.vertical2(sp, x, y))

    def vertical3(self, sp, x, y, z):
        return self._combine(self.first.vertical3(sp, x, y, z), self.second.vertical3(sp, x, y, z))


# ---------------------------------------------------------------------------
# Log-Laplace equation  d_s u = A u - (c/2) u^2,  u(0) = phi
# ---------------------------------------------------------------------------

NEGATIVITY_FLOOR = -1e-8


def _dense_grid(n_modes: int) -> np.ndarray:
    return collocation_grid(max(1024, 16 * n_modes))


def require_nonnegative(phi: FourierField, what: str = "phi"):
    """Raise NegativeInput unless phi >= 0 on a dense sample grid."""
    if float(np.min(eval_field(phi, _dense_grid(phi.n_modes)))) < -1e-12:
        raise NegativeInput(f"{what} needs a nonnegative test function")


@dataclass(frozen=True, eq=False)
class LogLaplaceSolution:
    """
    Spectral table of u(s, .) on s_j = j * T / n_steps.

    `coeffs[j]` and `rates[j]` hold the flat (a0, a, b) layout of u(s_j) and
    d_s u(s_j). Between slices both are interpolated linearly.
    """
    phi: FourierField
    T: float
    c: float
    times: np.ndarray
    coeffs: np.ndarray
    rates: np.ndarray
    _cache: Dict[Tuple[str, float], FourierField] = field(default_factory=dict, repr=False)

    @property
    def n_modes(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def n_steps(self) -> int:
        return int(self.times.size - 1)

    def _interpolate(self, table: np.ndarray, s: float) -> np.ndarray:
        if s < -1e-12 or s > self.T + 1e-12:
            raise TimeOutOfRange(f"s={s} outside [0, {self.T}]")
        position = min(max(s, 0.0), self.T) / self.T * self.n_steps
        nearest = round(position)
        if abs(position - nearest) < 1e-9:
            return table[int(nearest)]
        i = int(math.floor(position))
        w = position - i
        return (1.0 - w) * table[i] + w * table[i + 1]

    def _lookup(self, kind: str, s: float) -> FourierField:
        key = (kind, float(s))
        cached = self._cache.get(key)
        if cached is None:
            table = self.coeffs if kind == "u" else self.rates
            cached = FourierField.from_coeffs(self._interpolate(table, s))
            self._cache[key] = cached
        return cached

    def u(self, s: float) -> FourierField:
        return self._lookup("u", s)

    def time_derivative(self, s: float) -> FourierField:
        return self._lookup("du", s)

    def u_squared(self, s: float) -> FourierField:
        key = ("u2", float(s))
        cached = self._cache.get(key)
        if cached is None:
            u = self.u(s)
            cached = self._cache[key] = u.multiply(u)
        return cached

    def sup_norm(self) -> float:
        grid = _dense_grid(self.n_modes)
        return max(float(np.max(np.abs(eval_field(FourierField.from_coeffs(c), grid)))) for c in self.coeffs)


def solve_log_laplace(
    phi: FourierField, T: float, c: float, n_steps: int = 1024, n_modes: int = 16
) -> LogLaplaceSolution:
    """
    Integrate d_s u = A u - (c/2) u^2 from u(0) = phi.

    RK4 on the integrating-factor form: the heat semigroup is applied exactly
    per mode, the quadratic term is formed on 4 * n_modes collocation points
    and projected back onto the retained modes.
    """
    if phi.n_modes > n_modes:
        raise ValueError(f"phi carries {phi.n_modes} modes, solver keeps only {n_modes}")
    if not T > 0 or n_steps < 1:
        raise ValueError("solver needs T > 0 and at least one step")
    if c < 0:
        raise ValueError(f"branching rate must be >= 0, got {c}")
    require_nonnegative(phi, "log-Laplace terminal field")

    h = T / n_steps
    eigen = generator_eigenvalues(n_modes)
    rates = np.concatenate([[0.0], eigen, eigen])
    half = np.exp(rates * h / 2)
    full = np.exp(rates * h)

    points = max(4 * n_modes, 4)
    grid = collocation_grid(points)
    k = np.arange(1, n_modes + 1)
    basis = np.hstack([
        np.ones((points, 1)),
        np.cos(2 * np.pi * np.outer(grid, k)),
        np.sin(2 * np.pi * np.outer(grid, k)),
    ])

    def nonlinear(v: np.ndarray) -> np.ndarray:
        if c == 0:
            return np.zeros_like(v)
        samples = basis @ v
        return -0.5 * c * FourierField.from_samples(samples * samples, n_modes).coeffs

    v = phi.padded(n_modes).coeffs
    table = [v]
    derivatives = [rates * v + nonlinear(v)]
    for _ in range(n_steps):
        k1 = nonlinear(v)
        k2 = nonlinear(half * (v + 0.5 * h * k1))
        k3 = nonlinear(half * v + 0.5 * h * k2)
        k4 = nonlinear(full * v + h * half * k3)
        v = full * v + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
        table.append(v)
        derivatives.append(rates * v + nonlinear(v))

    coeffs = np.array(table)
    if not np.all(np.isfinite(coeffs)):
        raise NonConvergence("log-Laplace solver produced non-finite coefficients")
    dense = _dense_grid(n_modes)
    dense_basis = np.hstack([
        np.ones((dense.size, 1)),
        np.cos(2 * np.pi * np.outer(dense, k)),
        np.sin(2 * np.pi * np.outer(dense, k)),
    ])
    lowest = float((coeffs @ dense_basis.T).min())
    if lowest < NEGATIVITY_FLOOR:
        raise NonConvergence(f"u dropped to {lowest:.3g}, below the floor {NEGATIVITY_FLOOR}")

    times = np.linspace(0.0, T, n_steps + 1)
    rates_table = np.array(derivatives)
    for array in (times, coeffs, rates_table):
        array.setflags(write=False)
    return LogLaplaceSolution(phi, float(T), float(c), times, coeffs, rates_table)


def write_solution_csv(sol: LogLaplaceSolution, file_path: Union[str, Path]):
    """Rows s,a0,a1..aK,b1..bK, one per solver slice."""
    k = sol.n_modes
    header = ["s", "a0"] + [f"a{i}" for i in range(1, k + 1)] + [f"b{i}" for i in range(1, k + 1)]
    with open(file_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for s, row in zip(sol.times.tolist(), sol.coeffs):
            writer.writerow([repr(s)] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Exponential martingale
# ---------------------------------------------------------------------------

class ExpMartingaleState(StateFunctional):
    """G(t, mu) = exp(-<mu, u(T - t)>) for a log-Laplace solution u."""

    analytic = True
    is_martingale = True

    def __init__(self, sol: LogLaplaceSolution):
        self.sol = sol

    def get_name(self) -> str:
        return "exp-martingale"

    def _s(self, t: float) -> float:
        return self.sol.T - t

    def value(self, t, mu):
        return math.exp(-pair(mu, self.sol.u(self._s(t))))

    def horizontal(self, t, mu):
        return self.value(t, mu) * pair(mu, self.sol.time_derivative(self._s(t)))

    def vertical_field(self, t, mu):
        return -self.value(t, mu) * self.sol.u(self._s(t))

    def generator_vertical_field(self, t, mu):
        return -self.value(t, mu) * apply_generator(self.sol.u(self._s(t)))

    def vertical2_diagonal_field(self, t, mu):
        return self.value(t, mu) * self.sol.u_squared(self._s(t))

    def vertical2(self, t, mu, x, y):
        u = self.sol.u(self._s(t))
        return eval_field(u, x) * eval_field(u, y) * self.value(t, mu)

    def vertical3(self, t, mu, x, y, z):
        u = self.sol.u(self._s(t))
        return -eval_field(u, x) * eval_field(u, y) * eval_field(u, z) * self.value(t, mu)


def exp_martingale_state(sol: LogLaplaceSolution) -> ExpMartingaleState:
    return ExpMartingaleState(sol)


def exp_martingale_functional(sol: LogLaplaceSolution) -> Functional:
    """F(t, omega) = exp(-<omega(t), u(T - t)>), flagged as a martingale."""
    return SliceFunctional(ExpMartingaleState(sol))


def laplace_samples(params: SimParams, phi: FourierField, replicates: int) -> np.ndarray:
    """exp(-<X_T, phi>) for replicates 0..R-1."""
    require_nonnegative(phi, "Laplace functional")
    return np.array([
        math.exp(-pair(simulate_path(params, r).snapshots[-1], phi)) for r in range(replicates)
    ])


def mean_laplace_functional(params: SimParams, phi: FourierField, replicates: int) -> float:
    """Monte Carlo estimate of E[exp(-<X_T, phi>)]."""
    return float(np.mean(laplace_samples(params, phi, replicates)))


# ---------------------------------------------------------------------------
# Boundedness sampling
# ---------------------------------------------------------------------------

@dataclass
class BoundsSample:
    """Extremes of a functional and its derivatives over sampled stopped paths."""
    f_min: float
    f_max: float
    horizontal_max: float
    vertical_max: float
    vertical2_max: float
    samples: int


def sample_bounds(
    F: Union[Functional, StateFunctional],
    stopped_paths: Iterable[StoppedPath],
    directions: Sequence[CirclePoint],
) -> BoundsSample:
    """Sample |F|, |D* F|, |D_x F| and |D_xx F| over paths and directions."""
    F = as_functional(F)
    values: List[float] = []
    horizontal = vertical = vertical2 = 0.0
    for sp in stopped_paths:
        values.append(F.evaluate(sp))
        horizontal = max(horizontal, abs(F.horizontal(sp)))
        for x in directions:
            vertical = max(vertical, abs(F.vertical(sp, x)))
            vertical2 = max(vertical2, abs(F.vertical2(sp, x, x)))
    if not values:
        raise ValueError("sample_bounds needs at least one stopped path")
    return BoundsSample(min(values), max(values), horizontal, vertical, vertical2, len(values))
