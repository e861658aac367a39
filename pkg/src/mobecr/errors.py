"""Exception types raised across the package."""


class MobeError(Exception):
    """Base class for all package errors."""


class DomainError(MobeError, ValueError):
    """An argument lies outside the domain of the model (e.g. a non-positive time)."""


class ClassificationError(MobeError, ValueError):
    """An observation could not be assigned to any monitoring cell."""


class InvalidTuningError(MobeError, ValueError):
    """The DPD tuning parameter is not usable for the requested operation."""


class SingularityError(MobeError, ArithmeticError):
    """A matrix or quadratic form that must be invertible is (numerically) singular."""


class NullPointError(MobeError, ValueError):
    """A power calculation was requested at a parameter that satisfies the null."""
