"""
Experiment Runner
Orchestrates one verification run: validate the configuration, simulate the
replicates (optionally across worker processes), assemble the calculus
checks, and write the report directory.

Replicate r always draws from the stream keyed by (seed, r) and results are
reduced serially in replicate order, so serial and parallel runs write
byte-identical files.
"""

import concurrent.futures as cf
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import ui
from calculus import (
    ItoReport,
    ito_summary,
    ito_terms_functional,
    ito_terms_state,
    mean_se,
    mp_record,
    representation_terms,
    rms,
    summarize_mp,
    within_se,
)
from config import VERSION, ExperimentConfig
from errors import AllReplicatesAborted, MassExplosion
from functionals import (
    CylindricalState,
    ExpOuter,
    Functional,
    LogLaplaceSolution,
    PowerOuter,
    SliceFunctional,
    StateFunctional,
    TimeWeightedOuter,
    constant_state,
    exp_martingale_functional,
    exp_martingale_state,
    exp_state,
    linear_state,
    product_path_functional,
    running_integral_functional,
    solve_log_laplace,
    write_solution_csv,
)
from measure import FourierField, format_field, pair, parse_field
from oracles import feller_comparison, feller_extinction_probability, feller_laplace, feller_variance
from pathspace import continuity_modulus, dyadic_distance, pre_stop_identity
from reports import (
    REPLICATE_COLUMNS,
    clear_failed,
    mark_failed,
    write_manifest,
    write_report_csv,
    write_rows_csv,
    write_summary_json,
)
from simulator import MeasurePath, SimParams, martingale_increments, quadratic_variation_empirical, simulate_path, write_path_csv

ONE = FourierField.constant(1.0)


@dataclass
class ExperimentResult:
    kind: str
    passed: bool
    output_dir: Path
    summary: Dict[str, Any]
    files: List[Path] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Functional construction
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _solution(phi_spec: str, T: float, c: float, n_steps: int, n_modes: int) -> LogLaplaceSolution:
    return solve_log_laplace(parse_field(phi_spec), T, c, n_steps, n_modes)


def log_laplace_solution(config: ExperimentConfig, sim: Optional[SimParams] = None) -> LogLaplaceSolution:
    sim = sim or config.sim
    return _solution(config.phi, sim.T, sim.c, config.solver_steps, config.solver_modes)


def build_state_functional(config: ExperimentConfig, sim: Optional[SimParams] = None) -> StateFunctional:
    phi = parse_field(config.phi)
    family = config.functional
    if family == "linear":
        return linear_state(phi)
    if family == "exp":
        return exp_state(phi)
    if family == "square":
        return CylindricalState(PowerOuter(2), [phi], name="square")
    if family == "timeweighted-exp":
        return CylindricalState(TimeWeightedOuter(ExpOuter([1.0]), 1.0), [phi], name="timeweighted-exp")
    if family == "constant":
        return constant_state(1.0)
    if family == "exp-martingale":
        return exp_martingale_state(log_laplace_solution(config, sim))
    raise ValueError(f"unknown state functional family '{family}'")


def build_functional(config: ExperimentConfig, sim: Optional[SimParams] = None) -> Functional:
    if config.functional == "running-integral":
        return running_integral_functional(parse_field(config.psi))
    if config.functional == "path-product":
        return product_path_functional(parse_field(config.phi), parse_field(config.psi))
    return SliceFunctional(build_state_functional(config, sim))


# ---------------------------------------------------------------------------
# Per-replicate tasks (top level so worker processes can import them)
# ---------------------------------------------------------------------------

Task = Tuple[ExperimentConfig, int, float]


def _replicate_row(path: MeasurePath) -> List[Any]:
    final = path.snapshots[-1]
    qv = quadratic_variation_empirical(martingale_increments(path, ONE))
    return [path.replicate, final.total_mass, final.is_zero, qv]


def _mp_task(task: Task) -> Dict[str, Any]:
    config, replicate, dt = task
    path = simulate_path(replace(config.sim, dt=dt), replicate)
    return {
        "row": _replicate_row(path),
        "records": [mp_record(path, parse_field(spec)) for spec in config.fields],
    }


def _ito_task(task: Task) -> Dict[str, Any]:
    config, replicate, dt = task
    sim = replace(config.sim, dt=dt)
    path = simulate_path(sim, replicate)
    bound, modes = config.integrand_bound, config.projection_modes
    if config.kind == "ito-state":
        report = ito_terms_state(build_state_functional(config, sim), path, config.horizon, bound, modes)
    else:
        report = ito_terms_functional(build_functional(config, sim), path, config.horizon, bound, modes)
    return {"row": _replicate_row(path), "report": report}


def _representation_task(task: Task) -> Dict[str, Any]:
    config, replicate, dt = task
    sim = replace(config.sim, dt=dt)
    path = simulate_path(sim, replicate)
    F = exp_martingale_functional(log_laplace_solution(config, sim))
    lhs, martingale = representation_terms(F, path, config.horizon, config.integrand_bound, config.projection_modes)
    laplace = math.exp(-pair(path.snapshots[-1], parse_field(config.phi)))
    return {"row": _replicate_row(path), "lhs": lhs, "martingale": martingale, "laplace": laplace}


def _dyadic_task(task: Task) -> Dict[str, Any]:
    config, replicate, dt = task
    path = simulate_path(replace(config.sim, dt=dt), replicate)
    t = config.horizon
    return {
        "row": _replicate_row(path),
        "distances": [dyadic_distance(path, t, n) for n in config.levels],
        "moduli": [continuity_modulus(path, 2.0 ** -n) for n in config.levels],
        "identity": all(pre_stop_identity(path, t, n) for n in config.levels),
    }


def _laplace_task(task: Task) -> Dict[str, Any]:
    config, replicate, dt = task
    path = simulate_path(replace(config.sim, dt=dt), replicate)
    return {"row": _replicate_row(path), "laplace": math.exp(-pair(path.snapshots[-1], parse_field(config.phi)))}


def _guarded(fn: Callable[[Task], Dict[str, Any]], task: Task) -> Dict[str, Any]:
    try:
        return fn(task)
    except MassExplosion as e:
        return {"aborted": str(e), "replicate": task[1]}


def _quiet_worker():
    ui.set_quiet(True)


_TASKS = {
    "mp": _mp_task,
    "ito-state": _ito_task,
    "ito-functional": _ito_task,
    "representation": _representation_task,
    "dyadic-convergence": _dyadic_task,
    "laplace-oracle": _laplace_task,
}


def _run_task(task: Task) -> Dict[str, Any]:
    return _guarded(_TASKS[task[0].kind], task)


def map_replicates(config: ExperimentConfig, dt: float, description: str) -> List[Dict[str, Any]]:
    """Run every replicate at step dt; results come back in replicate order."""
    tasks = [(config, r, dt) for r in range(config.replicates)]
    results: List[Dict[str, Any]] = []
    with ui.create_progress() as progress:
        bar = progress.add_task(description, total=len(tasks))
        if config.workers == 1:
            for task in tasks:
                results.append(_run_task(task))
                progress.update(bar, advance=1)
        else:
            with cf.ProcessPoolExecutor(max_workers=config.workers, initializer=_quiet_worker) as pool:
                for result in pool.map(_run_task, tasks):
                    results.append(result)
                    progress.update(bar, advance=1)
    return results


def _split_aborted(results: List[Dict[str, Any]]) -> Tuple[List[Dict[str, Any]], List[int]]:
    kept = [r for r in results if "aborted" not in r]
    aborted = [r["replicate"] for r in results if "aborted" in r]
    for r in results:
        if "aborted" in r:
            ui.print_warning(f"replicate {r['replicate']} aborted: {r['aborted']}")
    return kept, aborted


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class ExperimentRunner:
    """One configured run from validation to the manifest."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.output_dir = Path(config.output_dir) / config.kind
        self.files: List[Path] = []
        self.flags: Dict[str, bool] = {}
        self.summary: Dict[str, Any] = {}
        self.attempted = 0
        self.aborted: List[int] = []

    def run(self) -> ExperimentResult:
        config = self.config.validate()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        clear_failed(self.output_dir)

        ui.print_phase(1, "Configure", f"{config.kind}: N={config.sim.n_particles}, c={config.sim.c}, "
                                       f"T={config.sim.T}, replicates={config.replicates}, seed={config.sim.seed}")
        try:
            ui.print_phase(2, "Simulate & assemble", "replicates are independent Philox streams keyed by (seed, replicate)")
            getattr(self, "_run_" + config.kind.replace("-", "_"))()
            if self.attempted:
                fraction = len(self.aborted) / self.attempted
                self.summary["abort_fraction"] = fraction
                self.flags["abort_fraction"] = fraction <= config.thresholds.max_abort_fraction

            ui.print_phase(3, "Report", str(self.output_dir))
            self.summary["flags"] = self.flags
            self.summary["passed"] = all(self.flags.values())
            self.summary["version"] = VERSION
            self._write_summary()
        except Exception as e:
            mark_failed(self.output_dir, f"{type(e).__name__}: {e}")
            raise

        passed = self.summary["passed"]
        if not passed:
            failed = [name for name, ok in self.flags.items() if not ok]
            mark_failed(self.output_dir, "acceptance flags failed: " + ", ".join(failed))
        ui.print_summary_table(f"{config.kind} summary", self.summary)
        ui.print_summary_table("Acceptance flags", self.flags)
        ui.print_completion_banner(str(self.output_dir), passed, [str(f) for f in self.files])
        return ExperimentResult(config.kind, passed, self.output_dir, self.summary, self.files)

    def _map(self, dt: float, description: str) -> Tuple[List[Dict[str, Any]], List[int]]:
        """Run one replicate batch; aborted replicates are tallied for the abort flag."""
        results, aborted = _split_aborted(map_replicates(self.config, dt, description))
        self.attempted += len(results) + len(aborted)
        self.aborted.extend(aborted)
        if not results:
            raise AllReplicatesAborted(len(aborted), description)
        return results, aborted

    # -- output helpers -------------------------------------------------------

    def _csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = write_rows_csv(self.output_dir / name, header, rows)
        self.files.append(path)
        return path

    def _replicate_table(self, results: List[Dict[str, Any]], name: str = "replicates.csv"):
        self._csv(name, REPLICATE_COLUMNS, (r["row"] for r in results))

    def _write_summary(self):
        self.files.append(write_summary_json(self.output_dir / "summary.json", self.summary))
        meta = {
            "version": VERSION,
            "kind": self.config.kind,
            "seed": self.config.sim.seed,
            "config": self.config.to_dict(),
        }
        write_manifest(self.output_dir, self.files, meta)

    # -- experiment kinds -----------------------------------------------------

    def _run_mp(self):
        config, th = self.config, self.config.thresholds
        results, aborted = self._map(config.sim.dt, "martingale problem")
        self._replicate_table(results)

        rows = []
        for j, spec in enumerate(config.fields):
            summary = summarize_mp([r["records"][j] for r in results], th.se_multiplier, th.qv_tolerance, spec)
            rows.append([spec, summary.replicates, summary.mean_m, summary.se_m,
                         summary.mean_qv_empirical, summary.mean_qv_nu, summary.qv_ratio,
                         summary.mean_m_squared, summary.isometry_ratio])
            self.summary[f"mp[{spec}]"] = summary.to_dict()
            self.flags[f"mean_M[{spec}]"] = summary.mean_pass
            if summary.qv_pass is not None:
                self.flags[f"qv_ratio[{spec}]"] = summary.qv_pass
            if summary.isometry_pass is not None:
                self.flags[f"isometry[{spec}]"] = summary.isometry_pass
        self._csv("mp.csv", ["field", "replicates", "mean_m", "se_m", "mean_qv_empirical", "mean_qv_nu", "qv_ratio",
                            "mean_m_squared", "isometry_ratio"], rows)
        ui.print_rows_table("Martingale problem", ["field", "R", "mean M", "SE", "QV emp", "QV nu", "ratio", "mean M^2", "M^2 / nu"], rows)

        self._feller_checks([r["row"][1] for r in results])
        self.summary["aborted_replicates"] = aborted

    def _feller_checks(self, final_masses: List[float]):
        sim, th = self.config.sim, self.config.thresholds
        masses = np.asarray(final_masses, dtype=float)
        if masses.size < 2 or sim.c == 0:
            return
        variance = float(masses.var(ddof=1))
        predicted = feller_variance(sim.initial_mass, sim.c, sim.T)
        extinct = float(np.mean(masses == 0.0))
        exact = feller_extinction_probability(sim.initial_mass, sim.c, sim.T)
        se = math.sqrt(max(exact * (1.0 - exact), 1e-300) / masses.size)
        self.summary["feller"] = {
            "variance": variance,
            "variance_predicted": predicted,
            "extinction_frequency": extinct,
            "extinction_predicted": exact,
            "extinction_se": se,
        }
        self.flags["feller_variance"] = abs(variance / predicted - 1.0) <= th.feller_variance_tolerance
        self.flags["feller_extinction"] = abs(extinct - exact) <= th.se_multiplier * se

    def _run_ito_state(self):
        self._run_ito()

    def _run_ito_functional(self):
        self._run_ito()

    def _run_ito(self):
        config, th = self.config, self.config.thresholds
        ratios: List[Optional[float]] = []
        level_rows = []
        for level, dt in enumerate(config.refinement):
            results, aborted = self._map(dt, f"Itô terms, dt={dt:g}")
            reports: List[ItoReport] = [r["report"] for r in results]
            summary = ito_summary(reports, th.relative_residual)
            summary["dt"] = dt
            summary["aborted_replicates"] = aborted
            self.summary[f"level{level}"] = summary
            ratios.append(summary["residual_ratio"])
            level_rows.append([dt, summary["rms_residual"], summary["rms_lhs"], summary["residual_ratio"], summary["max_drift_ratio"]])

            write_report_csv(self.output_dir / f"report_dt{level}.csv", reports)
            self.files.append(self.output_dir / f"report_dt{level}.csv")
            self._replicate_table(results, f"replicates_dt{level}.csv")

        self._csv("refinement.csv", ["dt", "rms_residual", "rms_lhs", "residual_ratio", "max_drift_ratio"], level_rows)
        ui.print_rows_table("Itô residuals", ["dt", "RMS residual", "RMS lhs", "ratio", "max drift ratio"], level_rows)

        first, level0 = ratios[0], self.summary["level0"]
        live = level0["replicates"] - level0["extinct_paths"]
        if first is None:
            # zero lhs scale: only an exactly vanishing residual passes
            self.flags["residual_ratio"] = live > 0 and level0["rms_residual"] == 0.0
        else:
            self.flags["residual_ratio"] = first < th.relative_residual
        if len(ratios) > 1 and all(r is not None for r in ratios):
            self.flags["refinement_improves"] = ratios[0] <= 1e-12 or all(b < a for a, b in zip(ratios, ratios[1:]))
        if config.functional == "exp-martingale":
            drift = self.summary["level0"]["max_drift_ratio"]
            self.flags["drift_cancellation"] = drift is None or drift < th.drift_ratio

    def _run_representation(self):
        config, th = self.config, self.config.thresholds
        sol = log_laplace_solution(config)
        solution_path = self.output_dir / "log_laplace.csv"
        write_solution_csv(sol, solution_path)
        self.files.append(solution_path)

        results, aborted = self._map(config.sim.dt, "representation")
        self._replicate_table(results)
        residuals = [r["lhs"] - r["martingale"] for r in results]
        self._csv("representation.csv", ["replicate", "lhs", "martingale", "residual"], (
            [r["row"][0], r["lhs"], r["martingale"], r["lhs"] - r["martingale"]] for r in results
        ))

        mean, se = mean_se(residuals)
        scale = rms([r["lhs"] for r in results])
        self.summary.update({
            "phi": format_field(parse_field(config.phi)),
            "mean_residual": mean,
            "se_residual": se,
            "rms_residual": rms(residuals),
            "rms_lhs": scale,
            "aborted_replicates": aborted,
        })
        self.flags["mean_residual"] = within_se(mean, se, 0.0, th.se_multiplier) or (mean == 0.0 and se == 0.0)
        self.flags["rms_residual"] = scale == 0.0 or rms(residuals) < th.relative_residual * scale
        self._laplace_cross_check([r["laplace"] for r in results])

    def _laplace_cross_check(self, values: List[float]) -> float:
        sim, th = self.config.sim, self.config.thresholds
        phi = parse_field(self.config.phi)
        mean, se = mean_se(values)
        self.summary["laplace_mean"] = mean
        self.summary["laplace_se"] = se
        if phi.sup_bound() == abs(phi.a0):
            exact = feller_laplace(sim.initial_mass, phi.a0, sim.c, sim.T)
            self.summary["laplace_exact"] = exact
            self.flags["laplace"] = (mean == exact) or within_se(mean, se, exact, th.se_multiplier)
        return mean

    def _run_laplace_oracle(self):
        results, aborted = self._map(self.config.sim.dt, "Laplace functional")
        self._replicate_table(results)
        self._csv("laplace.csv", ["replicate", "value"], ([r["row"][0], r["laplace"]] for r in results))
        self._laplace_cross_check([r["laplace"] for r in results])
        self.summary["aborted_replicates"] = aborted

    def _run_dyadic_convergence(self):
        config, th = self.config, self.config.thresholds
        results, aborted = self._map(config.sim.dt, "dyadic approximation")
        self._replicate_table(results)

        rows = []
        means = []
        for j, n in enumerate(config.levels):
            distances = [r["distances"][j] for r in results]
            moduli = [r["moduli"][j] for r in results]
            means.append(float(np.mean(distances)))
            rows.append([n, means[-1], float(np.max(distances)), float(np.mean(moduli))])
        self._csv("dyadic.csv", ["n", "mean_distance", "max_distance", "mean_modulus"], rows)
        ui.print_rows_table("Dyadic approximation", ["n", "mean distance", "max distance", "mean modulus"], rows)

        self.summary["levels"] = list(config.levels)
        self.summary["mean_distances"] = means
        self.summary["aborted_replicates"] = aborted
        self.flags["monotone"] = all(b <= a for a, b in zip(means, means[1:]))
        if len(means) > 1:
            self.flags["halving"] = means[-1] < th.dyadic_halving * means[0] or means[0] == 0.0
        self.flags["pre_stop_identity"] = all(r["identity"] for r in results)

    def _run_feller_oracle(self):
        sim, th = self.config.sim, self.config.thresholds
        comparison = feller_comparison(sim.initial_mass, sim.c, sim.T, sim.dt, self.config.feller_paths, sim.seed)
        self.summary.update(comparison.to_dict())
        self._csv("feller.csv", ["quantity", "exact", "sde"], [
            ["mean", comparison.mean_exact, comparison.mean_sde],
            ["variance", comparison.variance_exact, comparison.variance_sde],
            ["extinction", comparison.extinction_exact, comparison.extinction_sde],
            ["laplace", comparison.laplace_exact, comparison.laplace_sde],
        ])
        mean_se_value = math.sqrt(comparison.variance_exact / self.config.feller_paths)
        self.flags["mean"] = abs(comparison.mean_sde - comparison.mean_exact) <= th.se_multiplier * mean_se_value
        if comparison.variance_exact > 0:
            self.flags["variance"] = abs(comparison.variance_sde / comparison.variance_exact - 1.0) <= th.feller_variance_tolerance
        self.flags["extinction"] = abs(comparison.extinction_sde - comparison.extinction_exact) <= th.se_multiplier * comparison.extinction_se


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return ExperimentRunner(config).run()


def laplace_oracle(config: ExperimentConfig) -> float:
    """Monte Carlo E exp(-<X_T, phi>) with report emission."""
    result = run_experiment(replace(config, kind="laplace-oracle"))
    return float(result.summary["laplace_mean"])


def simulate_dump(config: ExperimentConfig, count: Optional[int] = None) -> List[Path]:
    """Simulate replicates 0..count-1 and dump each path as CSV."""
    config = config.validate()
    count = config.replicates if count is None else count
    output_dir = Path(config.output_dir) / "simulate"
    output_dir.mkdir(parents=True, exist_ok=True)
    files: List[Path] = []
    rows = []
    with ui.create_progress() as progress:
        bar = progress.add_task("simulating", total=count)
        for r in range(count):
            path = simulate_path(config.sim, r)
            target = output_dir / f"path_{r:04d}.csv"
            write_path_csv(path, target)
            files.append(target)
            rows.append(_replicate_row(path))
            progress.update(bar, advance=1)
    files.append(write_rows_csv(output_dir / "replicates.csv", REPLICATE_COLUMNS, rows))
    write_manifest(output_dir, files, {"version": VERSION, "kind": "simulate", "seed": config.sim.seed,
                                       "config": config.to_dict()})
    ui.print_success(f"wrote {count} paths to {output_dir}")
    return files
