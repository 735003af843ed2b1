"""
Measure Layer
Atomic finite measures on the unit circle, Fourier test functions with an exact
generator action, and the Fourier-mode proxy for the weak topology.

The state space E is the circle [0, 1) with wraparound arithmetic and the
one-particle motion is Brownian motion, so the generator is A = 1/2 d^2/dx^2
and acts diagonally on trigonometric polynomials.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from errors import NonPositiveEps

TWO_PI = 2.0 * np.pi

# Number of Fourier modes tested by the weak-topology proxy.
METRIC_MODES = 16

CirclePoint = float
ArrayLike = Union[float, Sequence[float], np.ndarray]


def wrap(x: ArrayLike) -> np.ndarray:
    """Map reals onto the circle [0, 1)."""
    wrapped = np.mod(np.asarray(x, dtype=float), 1.0)
    # np.mod(-1e-18, 1.0) == 1.0 in floating point
    return np.where(wrapped >= 1.0, 0.0, wrapped)


def circle_distance(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Arc distance on the unit circle, always in [0, 0.5]."""
    d = np.abs(wrap(x) - wrap(y))
    return np.minimum(d, 1.0 - d)


def as_circle_point(x: float) -> CirclePoint:
    """Validate and wrap a scalar coordinate."""
    if not np.isfinite(x):
        raise ValueError(f"circle coordinate must be finite, got {x}")
    return float(wrap(x))


# ---------------------------------------------------------------------------
# Finite measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteMeasure:
    """
    Atomic finite measure: particle positions on the circle with positive weights.

    Instances are immutable; the arrays are flagged read-only. Fourier moments
    are cached per instance so repeated pairings along a path stay cheap.
    """
    positions: np.ndarray
    weights: np.ndarray
    _moments: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        positions = wrap(np.asarray(self.positions, dtype=float).ravel())
        weights = np.array(self.weights, dtype=float).ravel()

        if positions.shape != weights.shape:
            raise ValueError(
                f"positions and weights differ in length ({positions.size} vs {weights.size})"
            )
        if weights.size and not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if weights.size and np.any(weights <= 0):
            raise ValueError("every atom weight must be strictly positive")

        positions.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def zero(cls) -> "FiniteMeasure":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def dirac(cls, x: CirclePoint, mass: float = 1.0) -> "FiniteMeasure":
        return cls(np.array([x]), np.array([mass]))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Tuple[float, float]]) -> "FiniteMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.zero()
        positions, weights = zip(*atoms)
        return cls(np.array(positions), np.array(weights))

    @classmethod
    def uniform(cls, n_atoms: int, mass: float = 1.0) -> "FiniteMeasure":
        """Lebesgue measure of the given mass realized as n equal atoms."""
        if n_atoms <= 0:
            return cls.zero()
        positions = np.arange(n_atoms) / n_atoms
        return cls(positions, np.full(n_atoms, mass / n_atoms))

    @cached_property
    def total_mass(self) -> float:
        return float(self.weights.sum()) if self.weights.size else 0.0

    @property
    def atoms(self) -> Iterator[Tuple[float, float]]:
        return zip(self.positions.tolist(), self.weights.tolist())

    @property
    def is_zero(self) -> bool:
        return self.weights.size == 0

    def __len__(self) -> int:
        return int(self.weights.size)

    def __add__(self, other: "FiniteMeasure") -> "FiniteMeasure":
        return FiniteMeasure(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.weights, other.weights]),
        )

    def scaled(self, alpha: float) -> "FiniteMeasure":
        """Return alpha * mu; alpha = 0 gives the zero measure."""
        if alpha < 0:
            raise ValueError("measures can only be scaled by alpha >= 0")
        if alpha == 0 or self.is_zero:
            return FiniteMeasure.zero()
        return FiniteMeasure(self.positions, self.weights * alpha)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FiniteMeasure):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def fourier_moments(mu: FiniteMeasure, n_modes: int) -> np.ndarray:
    """
    Complex moments m_k = sum_j w_j exp(2 pi i k x_j) for k = 0..n_modes.

    Re m_k = <mu, cos 2 pi k .>, Im m_k = <mu, sin 2 pi k .>.
    """
    cached = mu._moments.get("m")
    if cached is not None and cached.size > n_modes:
        return cached[: n_modes + 1]

    k = np.arange(n_modes + 1)
    if mu.is_zero:
        moments = np.zeros(n_modes + 1, dtype=complex)
    else:
        moments = np.exp(1j * TWO_PI * np.outer(k, mu.positions)) @ mu.weights
    moments.setflags(write=False)
    mu._moments["m"] = moments
    return moments


# ---------------------------------------------------------------------------
# Fourier test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FourierField:
    """
    Trigonometric polynomial phi(x) = a0 + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x).

    These are the test functions in D(A); the generator acts diagonally.
    """
    a0: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError("cosine and sine coefficient vectors must have equal length")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[float]) -> "FourierField":
        """Build from the flat layout (a0, a1..aK, b1..bK)."""
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        if coeffs.size % 2 != 1:
            raise ValueError(f"expected 2K+1 coefficients, got {coeffs.size}")
        n_modes = (coeffs.size - 1) // 2
        return cls(coeffs[0], coeffs[1:n_modes + 1], coeffs[n_modes + 1:])

    @classmethod
    def zero(cls, n_modes: int = 0) -> "FourierField":
        return cls(0.0, np.zeros(n_modes), np.zeros(n_modes))

    @classmethod
    def constant(cls, value: float) -> "FourierField":
        return cls(value, np.zeros(0), np.zeros(0))

    @classmethod
    def cosine(cls, mode: int, amplitude: float = 1.0) -> "FourierField":
        if mode == 0:
            return cls.constant(amplitude)
        a = np.zeros(mode)
        a[mode - 1] = amplitude
        return cls(0.0, a, np.zeros(mode))

    @classmethod
    def sine(cls, mode: int, amplitude: float = 1.0) -> "FourierField":
        if mode <= 0:
            raise ValueError("sine modes start at 1")
        b = np.zeros(mode)
        b[mode - 1] = amplitude
        return cls(0.0, np.zeros(mode), b)

    @classmethod
    def from_samples(cls, values: ArrayLike, n_modes: int) -> "FourierField":
        """
        Least-squares projection of samples at x_j = j/M onto modes <= n_modes.

        On a uniform grid this is the truncated discrete Fourier transform.
        """
        values = np.asarray(values, dtype=float).ravel()
        m = values.size
        if 2 * n_modes >= m:
            raise ValueError(f"{m} collocation points cannot resolve {n_modes} modes")
        spectrum = np.fft.rfft(values)
        a0 = spectrum[0].real / m
        a = 2.0 * spectrum[1:n_modes + 1].real / m
        b = -2.0 * spectrum[1:n_modes + 1].imag / m
        return cls(a0, a, b)

    # -- structure ----------------------------------------------------------

    @property
    def n_modes(self) -> int:
        return int(self.a.size)

    @property
    def coeffs(self) -> np.ndarray:
        return np.concatenate([[self.a0], self.a, self.b])

    @property
    def key(self) -> Tuple[float, ...]:
        """Hashable identity used for per-path caches."""
        return tuple(self.coeffs.tolist())

    def padded(self, n_modes: int) -> "FourierField":
        if n_modes <= self.n_modes:
            return self
        extra = np.zeros(n_modes - self.n_modes)
        return FourierField(self.a0, np.concatenate([self.a, extra]), np.concatenate([self.b, extra]))

    def sup_bound(self) -> float:
        """Upper bound on sup|phi| from the coefficient l1 norm."""
        return float(abs(self.a0) + np.abs(self.a).sum() + np.abs(self.b).sum())

    # -- algebra ------------------------------------------------------------

    def __add__(self, other: "FourierField") -> "FourierField":
        k = max(self.n_modes, other.n_modes)
        lhs, rhs = self.padded(k), other.padded(k)
        return FourierField(lhs.a0 + rhs.a0, lhs.a + rhs.a, lhs.b + rhs.b)

    def __sub__(self, other: "FourierField") -> "FourierField":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "FourierField":
        scalar = float(scalar)
        return FourierField(self.a0 * scalar, self.a * scalar, self.b * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "FourierField":
        return self * -1.0

    def multiply(self, other: "FourierField") -> "FourierField":
        """Exact pointwise product; the result carries K1 + K2 modes."""
        n_modes = self.n_modes + other.n_modes
        grid = collocation_grid(2 * n_modes + 1)
        return FourierField.from_samples(eval_field(self, grid) * eval_field(other, grid), n_modes)

    def dot_moments(self, moments: np.ndarray) -> float:
        """<mu, phi> from the Fourier moments of mu."""
        m = moments[1:self.n_modes + 1]
        return float(
            self.a0 * moments[0].real + np.dot(self.a, m.real) + np.dot(self.b, m.imag)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FourierField):
            return NotImplemented
        k = max(self.n_modes, other.n_modes)
        return np.array_equal(self.padded(k).coeffs, other.padded(k).coeffs)

    __hash__ = None


def collocation_grid(n_points: int) -> np.ndarray:
    return np.arange(n_points) / n_points


def eval_field(field: FourierField, x: ArrayLike) -> Union[float, np.ndarray]:
    """Exact pointwise value of the Fourier series; scalars in, scalar out."""
    points = np.asarray(x, dtype=float)
    flat = points.ravel()
    values = np.full(flat.shape, field.a0)
    if field.n_modes:
        angles = TWO_PI * np.outer(np.arange(1, field.n_modes + 1), flat)
        values = values + field.a @ np.cos(angles) + field.b @ np.sin(angles)
    if points.ndim == 0:
        return float(values[0])
    return values.reshape(points.shape)


def generator_eigenvalues(n_modes: int) -> np.ndarray:
    """Eigenvalues -1/2 (2 pi k)^2 of A = 1/2 d^2/dx^2 for k = 1..n_modes."""
    k = np.arange(1, n_modes + 1)
    return -0.5 * (TWO_PI * k) ** 2


def apply_generator(field: FourierField) -> FourierField:
    """A phi: mode k scaled by -1/2 (2 pi k)^2, constants annihilated."""
    scale = generator_eigenvalues(field.n_modes)
    return FourierField(0.0, field.a * scale, field.b * scale)


def integrate(mu: FiniteMeasure, field: FourierField) -> float:
    """<mu, phi> evaluated atom by atom."""
    if mu.is_zero:
        return 0.0
    return float(np.dot(mu.weights, eval_field(field, mu.positions)))


def pair(mu: FiniteMeasure, field: FourierField) -> float:
    """<mu, phi> through cached Fourier moments; agrees with integrate to rounding."""
    return field.dot_moments(fourier_moments(mu, field.n_modes))


def bump(mu: FiniteMeasure, x: CirclePoint, eps: float) -> FiniteMeasure:
    """Return mu + eps * delta_x as a new measure."""
    if not eps > 0:
        raise NonPositiveEps(f"bump size must be > 0, got {eps}")
    return FiniteMeasure(
        np.append(mu.positions, as_circle_point(x)),
        np.append(mu.weights, eps),
    )


def weak_distance(mu: FiniteMeasure, nu: FiniteMeasure, n_modes: int = METRIC_MODES) -> float:
    """
    Fourier-mode proxy for the Prokhorov metric.

    |mu(E) - nu(E)| + sum_{k<=K*} 2^-k (|<mu - nu, cos 2 pi k .>| + |<mu - nu, sin 2 pi k .>|)
    """
    delta = fourier_moments(mu, n_modes)[1:] - fourier_moments(nu, n_modes)[1:]
    decay = 0.5 ** np.arange(1, n_modes + 1)
    spectral = float(np.dot(decay, np.abs(delta.real) + np.abs(delta.imag)))
    return abs(mu.total_mass - nu.total_mass) + spectral


# ---------------------------------------------------------------------------
# Field specs ("const:2", "cos:1", "sin:2:0.5", "const:1+cos:1")
# ---------------------------------------------------------------------------

def parse_field(spec: str) -> FourierField:
    """Parse a compact field spec as used in configs and on the command line."""
    total = FourierField.zero()
    for term in spec.replace(" ", "").split("+"):
        if not term:
            continue
        kind, _, rest = term.partition(":")
        args = [float(p) for p in rest.split(":")] if rest else []
        try:
            if kind == "const":
                part = FourierField.constant(args[0] if args else 1.0)
            elif kind in ("cos", "sin"):
                mode = int(args[0]) if args else 1
                amplitude = args[1] if len(args) > 1 else 1.0
                build = FourierField.cosine if kind == "cos" else FourierField.sine
                part = build(mode, amplitude)
            elif kind == "coeffs":
                part = FourierField.from_coeffs(args)
            else:
                raise ValueError(f"unknown field kind '{kind}'")
        except IndexError:
            raise ValueError(f"malformed field term '{term}'")
        total = total + part
    return total


def format_field(field: FourierField) -> str:
    """Inverse of parse_field for reports."""
    terms: List[str] = []
    if field.a0 != 0.0 or field.n_modes == 0:
        terms.append(f"const:{field.a0:g}")
    for k in range(1, field.n_modes + 1):
        if field.a[k - 1] != 0.0:
            terms.append(f"cos:{k}:{field.a[k - 1]:g}")
        if field.b[k - 1] != 0.0:
            terms.append(f"sin:{k}:{field.b[k - 1]:g}")
    return "+".join(terms) if terms else "const:0"


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def write_measure_csv(mu: FiniteMeasure, path: Union[str, Path]):
    """Write rows position,weight under a '# mass=<total>' header."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# mass={mu.total_mass!r}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["position", "weight"])
        for position, weight in mu.atoms:
            writer.writerow([repr(position), repr(weight)])


def read_measure_csv(path: Union[str, Path]) -> FiniteMeasure:
    atoms = []
    with open(path, "r", encoding="utf-8") as f:
        rows = (line for line in f if not line.startswith("#"))
        for row in csv.reader(rows):
            if not row or row[0] == "position":
                continue
            atoms.append((float(row[0]), float(row[1])))
    return FiniteMeasure.from_atoms(atoms)


def write_field_csv(field: FourierField, path: Union[str, Path]):
    """Single row a0,a1,...,aK,b1,...,bK."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerow([repr(float(c)) for c in field.coeffs])


def read_field_csv(path: Union[str, Path]) -> FourierField:
    with open(path, "r", encoding="utf-8") as f:
        row = next(csv.reader(f))
    return FourierField.from_coeffs([float(c) for c in row])
