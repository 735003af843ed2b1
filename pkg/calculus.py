"""
Itô Calculus
Assembles every term of the state and functional Itô formulas and of the
martingale representation on simulated paths, and summarizes residuals over
replicates.

Time integrals are left Riemann sums and integrands are frozen at the left
end of each step, the same predictable discretization simulator uses for
the martingale increments. Sums are accumulated serially in grid order so
identical inputs give bitwise identical reports.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import ui
from errors import NotAMartingaleFunctional, TooFewReplicates, UnboundedIntegrand
from functionals import Functional, SliceFunctional, StateFunctional, as_functional
from measure import FourierField, apply_generator, collocation_grid, pair
from pathspace import (
    StoppedPath,
    bundle_derivative,
    bundle_project,
    lift,
    numeric_horizontal_derivative,
    numeric_vertical_derivative,
    numeric_vertical_second_derivative,
    stop,
)
from simulator import MeasurePath, martingale_increments, quadratic_variation_empirical

DEFAULT_INTEGRAND_BOUND = 1e6
DEFAULT_PROJECTION_MODES = 8
MIN_MP_REPLICATES = 30

Integrand = Union[FourierField, Callable[[float], FourierField]]


@dataclass
class ItoReport:
    """One path, one functional: lhs = F(t, X_t) - F(0, X_0) against the four Itô terms."""
    functional: str
    replicate: int
    seed: Optional[int]
    dt: float
    t: float
    lhs: float
    term_time: float
    term_generator: float
    term_quadratic: float
    term_martingale: float
    residual: float
    numeric: bool = False
    extinct: bool = False
    residual_rel: Optional[float] = None

    @property
    def drift(self) -> float:
        return self.term_time + self.term_generator + self.term_quadratic

    @property
    def drift_ratio(self) -> Optional[float]:
        """|drift| / |martingale term|; None when the martingale term vanishes."""
        if self.term_martingale == 0.0:
            return None
        return abs(self.drift) / abs(self.term_martingale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _StepTerms:
    horizontal: List[float] = field(default_factory=list)
    vertical: List[FourierField] = field(default_factory=list)
    generator: List[FourierField] = field(default_factory=list)
    diagonal: List[FourierField] = field(default_factory=list)


def _check_bound(g: FourierField, bound: float, s: float):
    sup = g.sup_bound()
    if not math.isfinite(sup) or sup > bound:
        raise UnboundedIntegrand(f"integrand at s={s:.6g} has sup bound {sup:.3g} > {bound:.3g}")


def _martingale_sum(
    path: MeasurePath, k_end: int, fields: Sequence[FourierField],
    generators: Sequence[FourierField], bound: float,
) -> float:
    steps = np.diff(path.times)
    total = 0.0
    for k in range(k_end):
        g = fields[k]
        _check_bound(g, bound, float(path.times[k]))
        x0, x1 = path.snapshots[k], path.snapshots[k + 1]
        total += (pair(x1, g) - pair(x0, g)) - steps[k] * pair(x0, generators[k])
    return total


def integrate_martingale_measure(
    path: MeasurePath, integrand: Integrand, t: float, bound: float = DEFAULT_INTEGRAND_BOUND
) -> float:
    """
    int_0^t int_E g(s, x) M(ds, dx) with g frozen at the left end of each step.

    `integrand` is a FourierField or a callable s -> FourierField.
    """
    k_end = path.nearest_index(t)
    if isinstance(integrand, FourierField):
        _check_bound(integrand, bound, 0.0)
        total = 0.0
        for value in martingale_increments(path, integrand).values[:k_end]:
            total += value
        return float(total)
    fields = [integrand(float(s)) for s in path.times[:k_end]]
    return float(_martingale_sum(path, k_end, fields, [apply_generator(g) for g in fields], bound))


def covariation_nu(path: MeasurePath, f: FourierField, g: FourierField, t: float) -> float:
    """c * sum_k dt <X(t_k), f g>, the predicted [M(f), M(g)]_t."""
    k_end = path.nearest_index(t)
    values = path.pairings(f.multiply(g))
    steps = np.diff(path.times)
    total = 0.0
    for k in range(k_end):
        total += steps[k] * values[k]
    return path.c * float(total)


def quadratic_variation_nu(path: MeasurePath, field: FourierField, t: float) -> float:
    """nu-predicted <M(phi)>_t = c int_0^t <X(s), phi^2> ds."""
    return covariation_nu(path, field, field, t)


def empirical_covariation(path: MeasurePath, f: FourierField, g: FourierField, t: float) -> float:
    """sum_k dM_k(f) dM_k(g) over steps before t."""
    k_end = path.nearest_index(t)
    a = martingale_increments(path, f).values[:k_end]
    b = a if f is g else martingale_increments(path, g).values[:k_end]
    return float(np.dot(a, b))


def m_norm_squared(paths: Sequence[MeasurePath], field: FourierField, t: float) -> float:
    """Monte Carlo ||f||_M^2 = E int_0^t int f^2 d nu for a time-independent f."""
    if not paths:
        raise TooFewReplicates("m_norm_squared needs at least one path")
    return float(np.mean([quadratic_variation_nu(p, field, t) for p in paths]))


# ---------------------------------------------------------------------------
# Derivative sweeps
# ---------------------------------------------------------------------------

_numeric_warned: set = set()


def _warn_numeric(name: str):
    if name not in _numeric_warned:
        _numeric_warned.add(name)
        ui.print_warning(f"{name}: using difference-quotient derivatives inside the residual loop")


def _project(values: np.ndarray, n_modes: int) -> FourierField:
    return FourierField.from_samples(values, n_modes)


def _numeric_vertical_field(F: Functional, sp: StoppedPath, n_modes: int, bundle: bool) -> FourierField:
    grid = collocation_grid(4 * n_modes)
    if bundle:
        f, bp = lift(F), bundle_project(sp)
        samples = [bundle_derivative(f, bp, x) for x in grid]
    else:
        samples = [numeric_vertical_derivative(F, sp, x) for x in grid]
    return _project(np.array(samples), n_modes)


def _numeric_diagonal_field(F: Functional, sp: StoppedPath, n_modes: int) -> FourierField:
    grid = collocation_grid(4 * n_modes)
    return _project(np.array([numeric_vertical_second_derivative(F, sp, x) for x in grid]), n_modes)


def _functional_sweep(
    F: Functional, path: MeasurePath, k_end: int, numeric: bool, projection_modes: int, bundle: bool
) -> _StepTerms:
    terms = _StepTerms()
    use_vertical = F.analytic_vertical and not numeric
    use_vertical2 = F.analytic_vertical2 and not numeric
    use_horizontal = F.analytic_horizontal and not numeric
    for k in range(k_end):
        sp = stop(path, float(path.times[k]))
        if use_horizontal:
            terms.horizontal.append(F.horizontal(sp))
        else:
            terms.horizontal.append(numeric_horizontal_derivative(F, sp, float(path.times[k + 1] - path.times[k])))
        if use_vertical:
            terms.vertical.append(F.vertical_field(sp))
            terms.generator.append(F.generator_vertical_field(sp))
        else:
            g = _numeric_vertical_field(F, sp, projection_modes, bundle)
            terms.vertical.append(g)
            terms.generator.append(apply_generator(g))
        if use_vertical2:
            terms.diagonal.append(F.vertical2_diagonal_field(sp))
        else:
            terms.diagonal.append(_numeric_diagonal_field(F, sp, projection_modes))
    return terms


def _state_sweep(F: StateFunctional, path: MeasurePath, k_end: int) -> _StepTerms:
    terms = _StepTerms()
    for k in range(k_end):
        s, mu = float(path.times[k]), path.snapshots[k]
        terms.horizontal.append(F.horizontal(s, mu))
        terms.vertical.append(F.vertical_field(s, mu))
        terms.generator.append(F.generator_vertical_field(s, mu))
        terms.diagonal.append(F.vertical2_diagonal_field(s, mu))
    return terms


def _assemble(
    name: str, path: MeasurePath, k_end: int, lhs: float, terms: _StepTerms,
    numeric: bool, bound: float,
) -> ItoReport:
    steps = np.diff(path.times)
    term_time = term_generator = quadratic = 0.0
    for k in range(k_end):
        mu = path.snapshots[k]
        term_time += steps[k] * terms.horizontal[k]
        term_generator += steps[k] * pair(mu, terms.generator[k])
        quadratic += steps[k] * pair(mu, terms.diagonal[k])
    term_quadratic = 0.5 * path.c * quadratic
    term_martingale = _martingale_sum(path, k_end, terms.vertical, terms.generator, bound)

    term_time, term_generator, term_martingale = float(term_time), float(term_generator), float(term_martingale)
    residual = lhs - (term_time + term_generator + term_quadratic + term_martingale)
    return ItoReport(
        functional=name,
        replicate=path.replicate,
        seed=path.params.seed if path.params is not None else None,
        dt=path.dt,
        t=float(path.times[k_end]),
        lhs=lhs,
        term_time=term_time,
        term_generator=term_generator,
        term_quadratic=float(term_quadratic),
        term_martingale=term_martingale,
        residual=float(residual),
        numeric=numeric,
        extinct=path.snapshots[k_end].is_zero,
    )


def ito_terms_state(
    F: StateFunctional, path: MeasurePath, t: Optional[float] = None,
    bound: float = DEFAULT_INTEGRAND_BOUND, projection_modes: int = DEFAULT_PROJECTION_MODES,
) -> ItoReport:
    """State Itô formula for F(t, X(t)); falls back to the path sweep when F has no analytic derivatives."""
    if not F.analytic:
        return ito_terms_functional(SliceFunctional(F), path, t, bound=bound, projection_modes=projection_modes)
    t = path.T if t is None else t
    k_end = path.nearest_index(t)
    lhs = F.value(float(path.times[k_end]), path.snapshots[k_end]) - F.value(float(path.times[0]), path.snapshots[0])
    return _assemble(F.get_name(), path, k_end, lhs, _state_sweep(F, path, k_end), False, bound)


def ito_terms_functional(
    F: Functional, path: MeasurePath, t: Optional[float] = None,
    bound: float = DEFAULT_INTEGRAND_BOUND, projection_modes: int = DEFAULT_PROJECTION_MODES,
    force_numeric: bool = False, bundle: bool = False,
) -> ItoReport:
    """
    Functional Itô formula on the stopped paths X_{t_k}.

    Missing analytic derivatives (or force_numeric) switch to difference
    quotients projected onto `projection_modes` Fourier modes; the report is
    flagged numeric. With bundle=True the vertical quotient is taken through
    the bundle view instead, which must not change anything.
    """
    F = as_functional(F)
    t = path.T if t is None else t
    k_end = path.nearest_index(t)
    numeric = force_numeric or not F.analytic
    if numeric:
        _warn_numeric(F.get_name())
    lhs = F.evaluate(stop(path, t)) - F.evaluate(stop(path, 0.0))
    terms = _functional_sweep(F, path, k_end, force_numeric, projection_modes, bundle)
    return _assemble(F.get_name(), path, k_end, lhs, terms, numeric, bound)


def representation_terms(
    F: Union[Functional, StateFunctional], path: MeasurePath, t: Optional[float] = None,
    bound: float = DEFAULT_INTEGRAND_BOUND, projection_modes: int = DEFAULT_PROJECTION_MODES,
) -> Tuple[float, float]:
    """(F(t, X_t) - F(0, X_0), int int D_x F(s, X_s) M(ds, dx))."""
    F = as_functional(F)
    if not F.is_martingale:
        raise NotAMartingaleFunctional(f"{F.get_name()} is not flagged as a martingale functional")
    t = path.T if t is None else t
    k_end = path.nearest_index(t)
    lhs = F.evaluate(stop(path, t)) - F.evaluate(stop(path, 0.0))

    fields: List[FourierField] = []
    generators: List[FourierField] = []
    for k in range(k_end):
        sp = stop(path, float(path.times[k]))
        if F.analytic_vertical:
            fields.append(F.vertical_field(sp))
            generators.append(F.generator_vertical_field(sp))
        else:
            g = _numeric_vertical_field(F, sp, projection_modes, bundle=False)
            fields.append(g)
            generators.append(apply_generator(g))
    return lhs, float(_martingale_sum(path, k_end, fields, generators, bound))


def representation_residual(
    F: Union[Functional, StateFunctional], path: MeasurePath, t: Optional[float] = None,
    bound: float = DEFAULT_INTEGRAND_BOUND, projection_modes: int = DEFAULT_PROJECTION_MODES,
) -> float:
    """F(t, X_t) - F(0, X_0) - int_0^t int_E D_x F(s, X_s) M(ds, dx)."""
    lhs, martingale = representation_terms(F, path, t, bound, projection_modes)
    return lhs - martingale


# ---------------------------------------------------------------------------
# Replicate summaries
# ---------------------------------------------------------------------------

def mean_se(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and its standard error."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def rms(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")


def within_se(mean: float, se: float, target: float, multiplier: float) -> bool:
    if math.isnan(se):
        return False
    return abs(mean - target) <= multiplier * se


def attach_relative_residuals(reports: Sequence[ItoReport]) -> float:
    """Set residual_rel = residual / RMS(lhs) over the non-extinct reports; returns that RMS."""
    live = [r for r in reports if not r.extinct]
    scale = rms([r.lhs for r in live]) if live else 0.0
    for r in reports:
        r.residual_rel = None if r.extinct or scale == 0.0 else r.residual / scale
    return scale


def ito_summary(reports: Sequence[ItoReport], relative_residual: float = 0.10) -> Dict[str, object]:
    """Batch statistics; extinct paths are counted but left out of the relative figures."""
    scale = attach_relative_residuals(reports)
    live = [r for r in reports if not r.extinct]
    residuals = [r.residual for r in live]
    mean, se = mean_se(residuals)
    ratio = rms(residuals) / scale if live and scale > 0 else None
    drift_ratios = [r.drift_ratio for r in live if r.drift_ratio is not None]
    return {
        "functional": reports[0].functional if reports else "",
        "replicates": len(reports),
        "extinct_paths": len(reports) - len(live),
        "numeric": any(r.numeric for r in reports),
        "rms_lhs": scale,
        "rms_residual": rms(residuals) if live else None,
        "mean_residual": mean,
        "se_residual": se,
        "residual_ratio": ratio,
        "max_drift_ratio": max(drift_ratios) if drift_ratios else None,
        "residual_ratio_pass": ratio is not None and ratio < relative_residual,
    }


@dataclass
class MPSummary:
    """Martingale-problem check for one test function over a replicate batch."""
    field: str
    replicates: int
    mean_m: float
    se_m: float
    mean_qv_empirical: float
    mean_qv_nu: float
    qv_ratio: Optional[float]
    mean_pass: bool
    qv_pass: Optional[bool]
    mean_m_squared: float = 0.0
    isometry_ratio: Optional[float] = None
    isometry_pass: Optional[bool] = None

    @property
    def passed(self) -> bool:
        return self.mean_pass and self.qv_pass is not False and self.isometry_pass is not False

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        return data


def mp_record(path: MeasurePath, phi: FourierField) -> Tuple[float, float, float]:
    """(M(T)(phi), empirical QV, nu-predicted QV) for one path."""
    incs = martingale_increments(path, phi)
    return incs.total, quadratic_variation_empirical(incs), quadratic_variation_nu(path, phi, path.T)


def summarize_mp(
    records: Sequence[Tuple[float, float, float]],
    se_multiplier: float = 3.0, qv_tolerance: float = 0.10, label: str = "",
) -> MPSummary:
    """Reduce per-path mp_record tuples, in replicate order."""
    if len(records) < MIN_MP_REPLICATES:
        raise TooFewReplicates(f"martingale problem check needs >= {MIN_MP_REPLICATES} replicates, got {len(records)}")
    totals = [r[0] for r in records]
    mean, se = mean_se(totals)
    mean_empirical = float(np.mean([r[1] for r in records]))
    mean_predicted = float(np.mean([r[2] for r in records]))
    if mean_predicted > 0:
        ratio: Optional[float] = mean_empirical / mean_predicted
        qv_pass: Optional[bool] = abs(ratio - 1.0) <= qv_tolerance
    else:
        ratio, qv_pass = None, None
    mean_pass = (mean == 0.0 and se == 0.0) or within_se(mean, se, 0.0, se_multiplier)

    # E M_T^2 = E <M>_T, tested pathwise on M_T^2 - nu_T
    squares = [r[0] * r[0] for r in records]
    gap_mean, gap_se = mean_se([s - r[2] for s, r in zip(squares, records)])
    mean_square = float(np.mean(squares))
    if mean_predicted > 0:
        isometry_ratio: Optional[float] = mean_square / mean_predicted
        isometry_pass: Optional[bool] = within_se(gap_mean, gap_se, 0.0, se_multiplier)
    else:
        isometry_ratio, isometry_pass = None, None
    return MPSummary(label, len(records), mean, se, mean_empirical, mean_predicted, ratio, mean_pass, qv_pass,
                     mean_square, isometry_ratio, isometry_pass)


def mp_verification(
    paths: Sequence[MeasurePath], phi: FourierField,
    se_multiplier: float = 3.0, qv_tolerance: float = 0.10, label: str = "",
) -> MPSummary:
    """
    Mean and SE of M(T)(phi) and the ratio of empirical to nu-predicted
    quadratic variation. The ratio is left undefined when nothing is predicted (c = 0).
    """
    if len(paths) < MIN_MP_REPLICATES:
        raise TooFewReplicates(f"martingale problem check needs >= {MIN_MP_REPLICATES} replicates, got {len(paths)}")
    return summarize_mp([mp_record(p, phi) for p in paths], se_multiplier, qv_tolerance, label)
