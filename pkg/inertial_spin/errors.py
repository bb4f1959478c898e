"""Exception types raised across the inertial_spin package."""
from typing import Any, Optional


class InertialSpinError(Exception):
    """Base class for every error raised by this package."""


class NumericInputError(InertialSpinError, ValueError):
    pass


class KernelContractError(InertialSpinError, ValueError):
    """A communication kernel produced weights outside its declared contract."""


class InvalidStateError(InertialSpinError, ValueError):
    pass


class UndefinedFactorError(InertialSpinError, ValueError):
    pass


class HypothesisViolation(InertialSpinError, ValueError):
    """Inputs do not satisfy the hypotheses an estimate is stated under."""


class ScenarioError(InertialSpinError, ValueError):

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class AuditNotApplicable(InertialSpinError, RuntimeError):
    pass


class QuadratureError(InertialSpinError, RuntimeError):
    pass


class OracleBudgetError(InertialSpinError, RuntimeError):
    pass


class DivergenceError(InertialSpinError, RuntimeError):
    """Raised when a step produces non-finite values.

    `trajectory` holds the samples recorded before the failure, when the error
    comes out of a full simulation.
    """

    def __init__(self, particle: int, time: float, trajectory: Optional[Any] = None):
        self.particle = particle
        self.time = time
        self.trajectory = trajectory
        super().__init__(f"non-finite state for particle {particle} at t={time:.6g}")


class NoDecayRateError(InertialSpinError, ValueError):
    """The admissible decay-rate set of a Gron2 problem is empty."""
