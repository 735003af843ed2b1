"""
Feller Oracles
Closed forms for the total-mass process Z = <X, 1> of a critical
B(A, c)-superprocess, which is a Feller diffusion dZ = sqrt(c Z) dW, and a
brute-force 1-D Euler simulation used to cross-check them.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from errors import InvalidParams
from simulator import replicate_rng


def feller_mean(m: float) -> float:
    """E Z_T = m; the total mass of a critical process is a martingale."""
    return float(m)


def feller_variance(m: float, c: float, T: float) -> float:
    return c * T * m


def feller_extinction_probability(m: float, c: float, T: float) -> float:
    """P(Z_T = 0) = exp(-2m / (cT))."""
    if c <= 0 or T <= 0:
        return 0.0
    return math.exp(-2.0 * m / (c * T))


def feller_laplace(m: float, lam: float, c: float, T: float) -> float:
    """E exp(-lam Z_T) = exp(-m lam / (1 + c lam T / 2))."""
    return math.exp(-m * lam / (1.0 + 0.5 * c * lam * T))


def riccati_solution(lam: float, c: float, s: float) -> float:
    """Spatially constant log-Laplace solution u(s) = lam / (1 + (c/2) lam s)."""
    return lam / (1.0 + 0.5 * c * lam * s)


@dataclass
class FellerSample:
    finals: np.ndarray
    extinct: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.finals.size)

    @property
    def extinction_frequency(self) -> float:
        return float(self.extinct.mean())


def simulate_feller(
    m: float, c: float, T: float, dt: float, n_paths: int, seed: int = 42
) -> FellerSample:
    """Euler scheme for dZ = sqrt(cZ) dW, clipped and absorbed at 0."""
    if not (m > 0 and c >= 0 and T > 0 and dt > 0 and n_paths > 0):
        raise InvalidParams("feller oracle needs m > 0, c >= 0, T > 0, dt > 0, n_paths > 0")
    rng = replicate_rng(seed, 0)
    n_steps = int(round(T / dt))
    z = np.full(n_paths, float(m))
    step_sd = math.sqrt(dt)
    for _ in range(n_steps):
        alive = z > 0
        if not alive.any():
            break
        noise = rng.standard_normal(int(alive.sum()))
        z[alive] = np.maximum(z[alive] + np.sqrt(c * z[alive]) * step_sd * noise, 0.0)
    return FellerSample(z, z == 0.0)


@dataclass
class FellerComparison:
    """Closed forms next to the brute-force estimates, with binomial/CLT errors."""
    mean_exact: float
    mean_sde: float
    variance_exact: float
    variance_sde: float
    extinction_exact: float
    extinction_sde: float
    extinction_se: float
    laplace_lambda: float
    laplace_exact: float
    laplace_sde: float

    def to_dict(self) -> dict:
        return asdict(self)


def feller_comparison(
    m: float, c: float, T: float, dt: float, n_paths: int, seed: int = 42, lam: float = 2.0
) -> FellerComparison:
    sample = simulate_feller(m, c, T, dt, n_paths, seed)
    p = sample.extinction_frequency
    return FellerComparison(
        mean_exact=feller_mean(m),
        mean_sde=float(sample.finals.mean()),
        variance_exact=feller_variance(m, c, T),
        variance_sde=float(sample.finals.var(ddof=1)) if n_paths > 1 else float("nan"),
        extinction_exact=feller_extinction_probability(m, c, T),
        extinction_sde=p,
        extinction_se=math.sqrt(max(p * (1.0 - p), 1e-300) / n_paths),
        laplace_lambda=lam,
        laplace_exact=feller_laplace(m, lam, c, T),
        laplace_sde=float(np.exp(-lam * sample.finals).mean()),
    )
