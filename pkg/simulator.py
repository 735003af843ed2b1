"""
Superprocess Simulator
Generates B(A,c)-superprocess paths as scaled critical branching Brownian
particle systems on the circle and exposes the discrete martingale increments
of the martingale problem.

Each step moves every particle by an independent Brownian increment (the
motion generated by A = 1/2 d^2/dx^2) and then lets it branch critically into
0 or 2 copies. Integrands downstream are always evaluated at the left end of a
step, increments over [t_k, t_{k+1}].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

import ui
from errors import InvalidParams, MassExplosion, TimeOutOfRange
from measure import FiniteMeasure, FourierField, apply_generator, pair, wrap

# Branching probability per step above which the Euler splitting is flagged.
BRANCHING_FLAG = 0.1

_flagged: set = set()


@dataclass(frozen=True)
class SimParams:
    """Run parameters of the particle approximation."""
    n_particles: int = 2000
    c: float = 1.0
    T: float = 1.0
    dt: float = 1.0 / 512
    initial_mass: float = 1.0
    seed: int = 42
    max_particles: int = 10_000_000
    max_branch_prob: float = 0.25
    motion: bool = True

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def particle_weight(self) -> float:
        return self.initial_mass / self.n_particles

    @property
    def branching_probability(self) -> float:
        """Per-step branching probability c*dt/w, i.e. c*N*dt for unit initial mass."""
        return self.c * self.dt / self.particle_weight

    def validate(self) -> "SimParams":
        """Check the invariants; returns self so calls can be chained."""
        problems = []
        if self.n_particles < 1:
            problems.append(f"n_particles must be >= 1 (got {self.n_particles})")
        if not self.c >= 0:
            problems.append(f"c must be >= 0 (got {self.c})")
        if not self.T > 0:
            problems.append(f"T must be > 0 (got {self.T})")
        if not self.dt > 0:
            problems.append(f"dt must be > 0 (got {self.dt})")
        elif self.T > 0 and abs(self.n_steps * self.dt - self.T) > 1e-9 * self.T:
            problems.append(f"T/dt must be an integer number of steps (T={self.T}, dt={self.dt})")
        if not self.initial_mass > 0:
            problems.append(f"initial_mass must be > 0 (got {self.initial_mass})")
        if not 0 <= self.seed < 2 ** 64:
            problems.append(f"seed must be a 64-bit unsigned integer (got {self.seed})")
        if self.max_particles < self.n_particles:
            problems.append("max_particles must be at least n_particles")
        if not 0 < self.max_branch_prob <= 1:
            problems.append("max_branch_prob must be in (0, 1]")
        if problems:
            raise InvalidParams("; ".join(problems))
        return self


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent counter-based stream keyed by (seed, replicate)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


@dataclass(eq=False)
class MeasurePath:
    """
    Time-gridded trajectory of finite measures.

    Simulated paths carry their SimParams; derived trajectories (dyadic
    approximations, loaded dumps) may reuse them. Pairings with a field are
    cached per path since the calculus sweeps hit them repeatedly.
    """
    times: np.ndarray
    snapshots: Tuple[FiniteMeasure, ...]
    params: Optional[SimParams] = None
    replicate: int = 0
    _pairings: Dict[Tuple[float, ...], np.ndarray] = field(default_factory=dict, repr=False)
    _running: Dict[Tuple[float, ...], np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.snapshots = tuple(self.snapshots)
        if self.times.size != len(self.snapshots):
            raise ValueError("one snapshot per grid time is required")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("grid times must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return int(self.times.size - 1)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def c(self) -> float:
        return self.params.c if self.params is not None else 0.0

    @property
    def masses(self) -> np.ndarray:
        return np.array([mu.total_mass for mu in self.snapshots])

    def _tolerance(self) -> float:
        return 1e-9 * max(self.dt, 1e-300)

    def nearest_index(self, t: float) -> int:
        """Snap a time to the nearest grid point."""
        if t < self.times[0] - self._tolerance() or t > self.times[-1] + self._tolerance():
            raise TimeOutOfRange(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return 0
        if i >= self.times.size:
            return self.n_steps
        return i if self.times[i] - t <= t - self.times[i - 1] else i - 1

    def floor_index(self, u: float) -> int:
        """Largest grid index with times[i] <= u."""
        i = int(np.searchsorted(self.times, u + self._tolerance(), side="right")) - 1
        return min(max(i, 0), self.n_steps)

    def pairings(self, field: FourierField) -> np.ndarray:
        """<X(t_k), field> for every grid time."""
        key = field.key
        values = self._pairings.get(key)
        if values is None:
            values = np.array([pair(mu, field) for mu in self.snapshots])
            values.setflags(write=False)
            self._pairings[key] = values
        return values

    def running_integral(self, field: FourierField) -> np.ndarray:
        """Left Riemann sums I_k = sum_{i<k} (t_{i+1} - t_i) <X(t_i), field>, I_0 = 0."""
        key = field.key
        values = self._running.get(key)
        if values is None:
            weighted = np.diff(self.times) * self.pairings(field)[:-1]
            values = np.concatenate([[0.0], np.cumsum(weighted)])
            values.setflags(write=False)
            self._running[key] = values
        return values


@dataclass(frozen=True)
class MartingaleIncrements:
    """Per-step values Delta M_k(phi) of the martingale problem."""
    field: FourierField
    times: np.ndarray
    values: np.ndarray

    def cumulative(self) -> np.ndarray:
        """Discrete M(t_k)(phi), starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.values)])

    @property
    def total(self) -> float:
        return float(self.cumulative()[-1])


def simulate_path(params: SimParams, replicate: int = 0) -> MeasurePath:
    """
    Simulate one replicate of the particle system.

    The initial measure is `initial_mass` spread uniformly over n_particles
    equal atoms. Deterministic given (seed, replicate).
    """
    params.validate()
    rng = replicate_rng(params.seed, replicate)

    weight = params.particle_weight
    p = params.branching_probability
    if p > BRANCHING_FLAG and p not in _flagged:
        _flagged.add(p)
        ui.print_warning(
            f"branching probability per step c·dt·N = {p:.3g} exceeds {BRANCHING_FLAG}; "
            f"splitting each step into sub-rounds"
        )
    rounds = math.ceil(p / params.max_branch_prob) if p > 0 else 0
    q = p / rounds if rounds else 0.0
    step_sd = math.sqrt(params.dt)

    times = np.linspace(0.0, params.T, params.n_steps + 1)
    positions = np.arange(params.n_particles) / params.n_particles
    snapshots: List[FiniteMeasure] = [FiniteMeasure(positions, np.full(positions.size, weight))]

    for k in range(params.n_steps):
        if positions.size:
            if params.motion:
                positions = wrap(positions + step_sd * rng.standard_normal(positions.size))
            for _ in range(rounds):
                u = rng.random(positions.size)
                dies = u < 0.5 * q
                splits = (u >= 0.5 * q) & (u < q)
                positions = np.concatenate([positions[~dies], positions[splits]])
                if positions.size > params.max_particles:
                    raise MassExplosion(positions.size, params.max_particles, float(times[k + 1]))
        snapshots.append(FiniteMeasure(positions, np.full(positions.size, weight)))

    return MeasurePath(times, tuple(snapshots), params, replicate)


def martingale_increments(path: MeasurePath, phi: FourierField) -> MartingaleIncrements:
    """Delta M_k(phi) = <X(t_{k+1}),phi> - <X(t_k),phi> - dt <X(t_k), A phi>."""
    values = path.pairings(phi)
    drift = path.pairings(apply_generator(phi))
    increments = values[1:] - values[:-1] - np.diff(path.times) * drift[:-1]
    return MartingaleIncrements(phi, path.times, increments)


def quadratic_variation_empirical(incs: MartingaleIncrements) -> float:
    """Sum of squared increments."""
    return float(np.dot(incs.values, incs.values))


def extinction_time(path: MeasurePath) -> Optional[float]:
    """First grid time with zero total mass, or None."""
    extinct = np.flatnonzero(path.masses == 0.0)
    if extinct.size == 0:
        return None
    return float(path.times[extinct[0]])


# ---------------------------------------------------------------------------
# Path dumps
# ---------------------------------------------------------------------------

def write_path_csv(path: MeasurePath, file_path: Union[str, Path]):
    """One CSV per path: rows time,position,weight; the grid is recorded in the header."""
    with open(file_path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# steps={path.n_steps} T={path.T!r} replicate={path.replicate}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["time", "position", "weight"])
        for t, mu in zip(path.times.tolist(), path.snapshots):
            for position, weight in mu.atoms:
                writer.writerow([repr(t), repr(position), repr(weight)])


def read_path_csv(file_path: Union[str, Path], params: Optional[SimParams] = None) -> MeasurePath:
    """Rebuild a MeasurePath from a dump written by write_path_csv."""
    with open(file_path, "r", encoding="utf-8") as f:
        header = dict(item.split("=", 1) for item in f.readline().lstrip("# ").split())
        n_steps, T = int(header["steps"]), float(header["T"])
        times = np.linspace(0.0, T, n_steps + 1)
        atoms: List[List[Tuple[float, float]]] = [[] for _ in times]
        for row in csv.reader(f):
            if not row or row[0] == "time":
                continue
            k = int(round(float(row[0]) / T * n_steps))
            atoms[k].append((float(row[1]), float(row[2])))
    snapshots = tuple(FiniteMeasure.from_atoms(a) for a in atoms)
    return MeasurePath(times, snapshots, params, int(header.get("replicate", 0)))
