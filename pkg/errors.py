"""
Superlab Errors
Domain exceptions raised by the measure, simulation and calculus layers.

Validation problems derive from ValueError so the CLI can report them as
configuration errors; numerical failures derive from RuntimeError.
"""


class SuperlabError(Exception):
    """Base class for every error raised by superlab."""


class NonPositiveEps(SuperlabError, ValueError):
    """A bump size was zero or negative; measures only admit positive bumps."""


class InvalidParams(SuperlabError, ValueError):
    """Simulation parameters violate their invariants."""


class TimeOutOfRange(SuperlabError, ValueError):
    """A stop time or horizontal step falls outside [0, T]."""


class NegativeInput(SuperlabError, ValueError):
    """A test function that must be nonnegative takes negative values."""


class UnboundedIntegrand(SuperlabError, ValueError):
    """A martingale-measure integrand exceeds the configured sup bound."""


class NotAMartingaleFunctional(SuperlabError, ValueError):
    """Representation was requested for a functional not flagged as a martingale."""


class TooFewReplicates(SuperlabError, ValueError):
    """A Monte Carlo summary was requested on too few replicates."""


class ConfigError(SuperlabError, ValueError):
    """Experiment configuration is malformed or references unknown keys."""


class MassExplosion(SuperlabError, RuntimeError):
    """The particle count exceeded the hard cap during a replicate."""

    def __init__(self, count: int, cap: int, time: float):
        self.count = count
        self.cap = cap
        self.time = time
        super().__init__(f"particle count {count:,} exceeded cap {cap:,} at t={time:.6g}")


class NonConvergence(SuperlabError, RuntimeError):
    """The log-Laplace solver produced values below the negativity floor."""


class AllReplicatesAborted(SuperlabError, RuntimeError):
    """Every replicate of a batch aborted, so there is nothing to reduce."""

    def __init__(self, replicates: int, description: str):
        self.replicates = replicates
        super().__init__(f"all {replicates} replicates aborted ({description})")
