"""
Path Space
Non-anticipative calculus on stopped measure-valued paths: stopping and
pre-stopping, the sup-distance between stopped paths, vertical and horizontal
perturbations with their difference quotients, the dyadic piecewise-constant
approximation, and the bundle view that keeps only the path up to its stop time.

A StoppedPath is the canonical representative omega_t of (t, omega): grid
lookups before t come from the underlying trajectory, everything from t on is
the frozen value `tail`. Functionals only ever see StoppedPaths, which makes
them non-anticipative by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple, Union

import numpy as np

from errors import NonPositiveEps, TimeOutOfRange
from measure import (
    METRIC_MODES,
    CirclePoint,
    FiniteMeasure,
    FourierField,
    bump,
    fourier_moments,
    pair,
    weak_distance,
)
from simulator import MeasurePath

if TYPE_CHECKING:
    from functionals import Functional


@dataclass(frozen=True, eq=False)
class StoppedPath:
    """
    Stopped path (t, omega_t).

    `head` counts the grid snapshots of `path` that are visible before t; the
    value on [t, T] is `tail`. stop() gives tail = omega(t), pre_stop() gives
    the left limit, a horizontal extension moves t forward with head and tail
    unchanged, and a vertical bump only touches tail.
    """
    t: float
    path: MeasurePath
    head: int
    tail: FiniteMeasure

    @property
    def current(self) -> FiniteMeasure:
        """omega(t)."""
        return self.tail

    @property
    def T(self) -> float:
        return self.path.T

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    def lookup(self, u: float) -> FiniteMeasure:
        if u >= self.t - self.path._tolerance():
            return self.tail
        i = self.path.floor_index(u)
        return self.path.snapshots[i] if i < self.head else self.tail

    def grid_values(self) -> List[FiniteMeasure]:
        """Lookups at every grid time of the underlying trajectory."""
        cut = self.t - self.path._tolerance()
        return [
            mu if (i < self.head and u < cut) else self.tail
            for i, (u, mu) in enumerate(zip(self.path.times, self.path.snapshots))
        ]

    def running_integral(self, field: FourierField) -> float:
        """Left Riemann sum of int_0^t <omega(s), field> ds over the stopped path."""
        head = min(self.head, self.path.n_steps)
        total = float(self.path.running_integral(field)[head])
        gap = self.t - float(self.path.times[head])
        if gap > self.path._tolerance():
            total += gap * pair(self.tail, field)
        return total

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StoppedPath):
            return NotImplemented
        return abs(self.t - other.t) <= self.path._tolerance() and same_lookups(self, other)

    __hash__ = None


def same_lookups(a: StoppedPath, b: StoppedPath) -> bool:
    """Equal grid lookups, ignoring the stop times."""
    values_a, values_b = a.grid_values(), b.grid_values()
    return len(values_a) == len(values_b) and all(
        x is y or x == y for x, y in zip(values_a, values_b)
    )


Trajectory = Union[MeasurePath, StoppedPath]


def _base(path: Trajectory) -> MeasurePath:
    return path.path if isinstance(path, StoppedPath) else path


def _value_at_index(path: Trajectory, k: int) -> FiniteMeasure:
    base = _base(path)
    if isinstance(path, StoppedPath):
        return path.lookup(float(base.times[k]))
    return base.snapshots[k]


def stop(path: Trajectory, t: float) -> StoppedPath:
    """omega_t(u) = omega(t ^ u), with t snapped to the nearest grid time."""
    base = _base(path)
    k = base.nearest_index(t)
    head = min(k, path.head) if isinstance(path, StoppedPath) else k
    return StoppedPath(float(base.times[k]), base, head, _value_at_index(path, k))


def pre_stop(path: Trajectory, t: float) -> StoppedPath:
    """omega_{t-}: omega on [0, t), the previous grid snapshot from t on."""
    base = _base(path)
    k = base.nearest_index(t)
    if k < 1:
        raise TimeOutOfRange(f"pre_stop needs t > 0 on the grid (got t={t})")
    head = min(k, path.head) if isinstance(path, StoppedPath) else k
    return StoppedPath(float(base.times[k]), base, head, _value_at_index(path, k - 1))


def path_distance(a: StoppedPath, b: StoppedPath) -> float:
    """sup_u d(a(u), b(u)) + |a.t - b.t| over the grid, d the weak-topology proxy."""
    if a.path is b.path or np.array_equal(a.times, b.times):
        values_a, values_b = a.grid_values(), b.grid_values()
    else:
        grid = np.union1d(a.times, b.times)
        values_a = [a.lookup(u) for u in grid]
        values_b = [b.lookup(u) for u in grid]
    spatial = max(
        (0.0 if x is y else weak_distance(x, y)) for x, y in zip(values_a, values_b)
    )
    return spatial + abs(a.t - b.t)


def vertical_bump_path(sp: StoppedPath, x: CirclePoint, eps: float) -> StoppedPath:
    """omega_t + eps delta_x 1_[t,T]."""
    if not eps > 0:
        raise NonPositiveEps(f"vertical bump needs eps > 0, got {eps}")
    return replace(sp, tail=bump(sp.tail, x, eps))


def horizontal_extension(sp: StoppedPath, h: float) -> StoppedPath:
    """(t + h, omega_t): the path held frozen at omega(t) for h more time."""
    if not h > 0:
        raise TimeOutOfRange(f"horizontal step must be > 0, got {h}")
    if sp.t + h > sp.T + sp.path._tolerance():
        raise TimeOutOfRange(f"t + h = {sp.t + h} exceeds T = {sp.T}")
    return replace(sp, t=sp.t + h)


def default_vertical_eps(mu: FiniteMeasure) -> float:
    return 1e-4 * max(1.0, mu.total_mass)


def default_second_eps(mu: FiniteMeasure) -> float:
    return 1e-3 * max(1.0, mu.total_mass)


def one_sided_first(f0: float, f1: float, f2: float, eps: float) -> float:
    """Second-order one-sided first derivative from values at 0, eps, 2 eps."""
    return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * eps)


def one_sided_second(f0: float, f1: float, f2: float, f3: float, eps: float) -> float:
    """Second-order one-sided second derivative from values at 0, eps, 2 eps, 3 eps."""
    return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (eps * eps)


def numeric_vertical_derivative(
    F: "Functional", sp: StoppedPath, x: CirclePoint, eps: Optional[float] = None
) -> float:
    """One-sided vertical derivative; exact on functionals affine in the bump."""
    eps = default_vertical_eps(sp.tail) if eps is None else eps
    if not eps > 0:
        raise NonPositiveEps(f"eps must be > 0, got {eps}")
    values = [F.evaluate(sp)] + [F.evaluate(vertical_bump_path(sp, x, j * eps)) for j in (1, 2)]
    return one_sided_first(*values, eps)


def numeric_vertical_second_derivative(
    F: "Functional", sp: StoppedPath, x: CirclePoint, eps: Optional[float] = None
) -> float:
    """Diagonal D_xx F by one-sided differences."""
    eps = default_second_eps(sp.tail) if eps is None else eps
    if not eps > 0:
        raise NonPositiveEps(f"eps must be > 0, got {eps}")
    values = [F.evaluate(sp)] + [F.evaluate(vertical_bump_path(sp, x, j * eps)) for j in (1, 2, 3)]
    return one_sided_second(*values, eps)


def numeric_horizontal_derivative(F: "Functional", sp: StoppedPath, h: Optional[float] = None) -> float:
    """Forward difference in t with the path held at omega_t; default h is one grid step."""
    h = sp.path.dt if h is None else h
    return (F.evaluate(horizontal_extension(sp, h)) - F.evaluate(sp)) / h


# ---------------------------------------------------------------------------
# Dyadic approximation
# ---------------------------------------------------------------------------

def dyadic_mesh(n: int, t: float) -> Tuple[float, ...]:
    """{0, 1/2^n, 2/2^n, ...} intersected with [0, t), with t appended."""
    if n < 0:
        raise ValueError(f"dyadic level must be >= 0, got {n}")
    if t <= 0:
        return (0.0,)
    step = 2.0 ** -n
    count = math.ceil(t / step)
    mesh = [j * step for j in range(count) if j * step < t]
    return tuple(mesh) + (float(t),)


def _mesh_indices(path: MeasurePath, n: int, t: float) -> List[int]:
    indices: List[int] = []
    for tau in dyadic_mesh(n, t):
        k = path.nearest_index(tau)
        if not indices or k > indices[-1]:
            indices.append(k)
    return indices


def dyadic_approximation(path: MeasurePath, t: float, n: int) -> MeasurePath:
    """
    App^n(X_t): X(tau_{i+1}) on [tau_i, tau_{i+1}), X(t) on [t, T].

    Mesh times are snapped to the simulation grid; the result is a trajectory
    on the same grid sharing the snapshot objects of `path`.
    """
    indices = _mesh_indices(path, n, t)
    k_t = indices[-1]
    snapshots: List[FiniteMeasure] = []
    j = 0
    for i in range(path.n_steps + 1):
        if i >= k_t:
            snapshots.append(path.snapshots[k_t])
            continue
        while indices[j + 1] <= i:
            j += 1
        snapshots.append(path.snapshots[indices[j + 1]])
    return MeasurePath(path.times, tuple(snapshots), path.params, path.replicate)


def dyadic_decomposition(F: "Functional", path: MeasurePath, t: float, n: int) -> List[Tuple[float, float]]:
    """
    Per-interval (horizontal leg, vertical leg) of the telescoping sum

        F(tau_{i+1}, App_{tau_{i+1}-}) - F(tau_i, App_{tau_i-})
          = [F(tau_{i+1}, App_{tau_{i+1}-}) - F(tau_i, App_{tau_i})]
          + [F(tau_i, App_{tau_i}) - F(tau_i, App_{tau_i-})]

    with App_{0-} read as X_0, so the legs sum to F(t, App_{t-}) - F(0, X_0).
    """
    approx = dyadic_approximation(path, t, n)
    indices = _mesh_indices(path, n, t)
    times = path.times

    legs: List[Tuple[float, float]] = []
    previous_pre = F.evaluate(stop(path, 0.0))
    for i in range(len(indices) - 1):
        at_left = F.evaluate(stop(approx, times[indices[i]]))
        pre_right = F.evaluate(pre_stop(approx, times[indices[i + 1]]))
        legs.append((pre_right - at_left, at_left - previous_pre))
        previous_pre = pre_right
    return legs


def pre_stop_identity(path: MeasurePath, t: float, n: int) -> bool:
    """App^n(X_t)_{tau_{i+1}-} and App^n(X_t)_{tau_i} agree at every grid time, for every mesh interval."""
    approx = dyadic_approximation(path, t, n)
    indices = _mesh_indices(path, n, t)
    return all(
        same_lookups(pre_stop(approx, path.times[right]), stop(approx, path.times[left]))
        for left, right in zip(indices[:-1], indices[1:])
    )


def dyadic_distance(path: MeasurePath, t: float, n: int) -> float:
    """d_inf(X_t, App^n(X_t))."""
    return path_distance(stop(path, t), stop(dyadic_approximation(path, t, n), t))


def _moment_matrix(path: MeasurePath, n_modes: int = METRIC_MODES) -> np.ndarray:
    return np.array([fourier_moments(mu, n_modes) for mu in path.snapshots])


def continuity_modulus(path: MeasurePath, delta: float) -> float:
    """max weak_distance(X(u), X(v)) over grid pairs with |u - v| <= delta."""
    moments = _moment_matrix(path)
    masses = path.masses
    decay = 0.5 ** np.arange(1, METRIC_MODES + 1)
    max_lag = int(np.floor(delta / path.dt + 1e-9)) if path.dt > 0 else 0
    worst = 0.0
    for lag in range(1, min(max_lag, path.n_steps) + 1):
        diff = moments[lag:, 1:] - moments[:-lag, 1:]
        spectral = (np.abs(diff.real) + np.abs(diff.imag)) @ decay
        distances = np.abs(masses[lag:] - masses[:-lag]) + spectral
        worst = max(worst, float(distances.max()))
    return worst


# ---------------------------------------------------------------------------
# Bundle view
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BundlePath:
    """Path restricted to [0, t]; `final` is its value at t."""
    t: float
    path: MeasurePath
    head: int
    final: FiniteMeasure

    def values(self) -> List[Tuple[float, FiniteMeasure]]:
        cut = self.t - self.path._tolerance()
        head = [
            (float(u), mu)
            for i, (u, mu) in enumerate(zip(self.path.times, self.path.snapshots))
            if i < self.head and u < cut
        ]
        return head + [(self.t, self.final)]

    @property
    def domain(self) -> Tuple[float, float]:
        return (0.0, self.t)


def bundle_project(sp: StoppedPath) -> BundlePath:
    """Forget the frozen extension beyond t."""
    return BundlePath(sp.t, sp.path, sp.head, sp.tail)


def bundle_restrict(bp: BundlePath) -> StoppedPath:
    """Extend a bundle path to [0, T] by holding its final value."""
    return StoppedPath(bp.t, bp.path, bp.head, bp.final)


def bundle_bump(bp: BundlePath, x: CirclePoint, eps: float) -> BundlePath:
    """Add eps delta_x at the single time t."""
    if not eps > 0:
        raise NonPositiveEps(f"bundle bump needs eps > 0, got {eps}")
    return replace(bp, final=bump(bp.final, x, eps))


def lift(F: "Functional") -> Callable[[BundlePath], float]:
    """f = F o phi on the bundle."""
    return lambda bp: F.evaluate(bundle_restrict(bp))


def bundle_derivative(
    f: Callable[[BundlePath], float], bp: BundlePath, x: CirclePoint, eps: Optional[float] = None
) -> float:
    """Delta_x f by the same one-sided stencil as the vertical derivative."""
    eps = default_vertical_eps(bp.final) if eps is None else eps
    values = [f(bp)] + [f(bundle_bump(bp, x, j * eps)) for j in (1, 2)]
    return one_sided_first(*values, eps)
