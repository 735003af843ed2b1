"""
Experiment Configuration
Dataclass configuration for every verification run, loaded from JSON or YAML
files and overridden by command-line flags.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from errors import ConfigError, InvalidParams, NegativeInput
from functionals import require_nonnegative
from measure import parse_field
from simulator import SimParams

VERSION = "1.0.0"

OUTPUT_DIR_ENV = "SUPERLAB_OUTPUT_DIR"

KINDS = (
    "mp",
    "ito-state",
    "ito-functional",
    "representation",
    "dyadic-convergence",
    "laplace-oracle",
    "feller-oracle",
)

STATE_FAMILIES = ("linear", "exp", "square", "timeweighted-exp", "constant", "exp-martingale")
PATH_FAMILIES = ("running-integral", "path-product") + STATE_FAMILIES


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass
class Thresholds:
    """Acceptance thresholds; recorded in every summary so runs are self-describing."""
    se_multiplier: float = 3.0
    qv_tolerance: float = 0.10
    relative_residual: float = 0.10
    feller_variance_tolerance: float = 0.15
    drift_ratio: float = 0.05
    dyadic_halving: float = 0.5
    max_abort_fraction: float = 0.0


@dataclass
class ExperimentConfig:
    kind: str = "mp"
    sim: SimParams = field(default_factory=SimParams)
    functional: str = "exp"
    phi: str = "const:2"
    psi: str = "const:1"
    fields: List[str] = field(default_factory=lambda: ["const:1", "cos:1", "sin:2"])
    replicates: int = 200
    dt_levels: List[float] = field(default_factory=list)
    levels: List[int] = field(default_factory=lambda: [2, 4, 6, 8])
    t: Optional[float] = None
    solver_steps: int = 1024
    solver_modes: int = 16
    projection_modes: int = 8
    integrand_bound: float = 1e6
    feller_paths: int = 20000
    workers: int = 1
    output_dir: str = field(default_factory=default_output_dir)
    thresholds: Thresholds = field(default_factory=Thresholds)

    @property
    def horizon(self) -> float:
        return self.sim.T if self.t is None else self.t

    @property
    def needs_nonnegative_phi(self) -> bool:
        """Runs that evaluate exp(-<X, phi>) or solve the log-Laplace equation from phi."""
        if self.kind in ("representation", "laplace-oracle"):
            return True
        return self.kind in ("ito-state", "ito-functional") and self.functional == "exp-martingale"

    @property
    def refinement(self) -> List[float]:
        return list(self.dt_levels) or [self.sim.dt]

    def validate(self) -> "ExperimentConfig":
        """Check every referenced field before anything is simulated."""
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind '{self.kind}' (choose from {', '.join(KINDS)})")
        try:
            self.sim.validate()
            for dt in self.refinement:
                replace(self.sim, dt=dt).validate()
        except InvalidParams as e:
            raise ConfigError(str(e)) from e

        for spec in [self.phi, self.psi, *self.fields]:
            try:
                parse_field(spec)
            except ValueError as e:
                raise ConfigError(f"bad field spec '{spec}': {e}") from e

        if self.needs_nonnegative_phi:
            try:
                require_nonnegative(parse_field(self.phi), f"phi for {self.kind}")
            except NegativeInput as e:
                raise ConfigError(str(e)) from e

        families = STATE_FAMILIES if self.kind == "ito-state" else PATH_FAMILIES
        if self.kind in ("ito-state", "ito-functional") and self.functional not in families:
            raise ConfigError(f"unknown functional '{self.functional}' for {self.kind} (choose from {', '.join(families)})")
        if not 0.0 <= self.thresholds.max_abort_fraction <= 1.0:
            raise ConfigError("max_abort_fraction must lie in [0, 1]")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if any(int(n) != n or n < 0 for n in self.levels):
            raise ConfigError("dyadic levels must be nonnegative integers")
        if self.t is not None and not 0 <= self.t <= self.sim.T:
            raise ConfigError(f"t must lie in [0, T] (got {self.t})")
        if self.solver_steps < 1 or self.solver_modes < 0 or self.projection_modes < 1:
            raise ConfigError("solver_steps and projection_modes must be >= 1, solver_modes >= 0")
        if not self.integrand_bound > 0:
            raise ConfigError("integrand_bound must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.feller_paths < 2:
            raise ConfigError("feller_paths must be >= 2")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_keys(data: Mapping[str, Any], allowed: Any, where: str):
    names = {f.name for f in fields(allowed)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            current = merged.get(key)
            merged[key] = _merge(dict(current) if isinstance(current, Mapping) else {}, value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON or YAML config file into a plain mapping."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(data: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Defaults, then file values, then flag overrides (None means "not given").

    `sim` and `thresholds` are nested mappings; unknown keys at any level are
    rejected.
    """
    merged = _merge(dict(data or {}), overrides or {})
    _check_keys(merged, ExperimentConfig, "config")

    sim_data = merged.pop("sim", {}) or {}
    thresholds_data = merged.pop("thresholds", {}) or {}
    if not isinstance(sim_data, Mapping) or not isinstance(thresholds_data, Mapping):
        raise ConfigError("'sim' and 'thresholds' must be mappings")
    _check_keys(sim_data, SimParams, "sim")
    _check_keys(thresholds_data, Thresholds, "thresholds")

    try:
        config = ExperimentConfig(
            sim=SimParams(**sim_data),
            thresholds=Thresholds(**thresholds_data),
            **merged,
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if isinstance(config.fields, str):
        config.fields = [f for f in config.fields.split(",") if f]
    return config.validate()
