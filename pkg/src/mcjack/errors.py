"""Exception types shared across the package."""


class McjackError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(McjackError):
    """Inputs violate a shape or construction invariant (dimension mismatch etc.)."""


class DomainError(McjackError):
    """An argument lies outside the mathematical domain of the operation."""


class SingularDesign(McjackError):
    """Design matrix is rank deficient or the normal equations are too ill-conditioned."""


class InsufficientData(McjackError):
    """Too few areas for the requested estimator (need m > number of regressors)."""


class DegenerateFit(McjackError):
    """The data are fitted exactly by the mean model; the likelihood fit is meaningless."""


class NoViableModel(McjackError):
    """Every candidate model failed to fit."""


class JackknifeRankError(McjackError):
    """A leave-one-out design lost full rank.  ``area`` names the deleted area."""

    def __init__(self, message: str, area=None):
        super().__init__(message)
        self.area = area


class ScenarioError(McjackError):
    """A simulation scenario failed (e.g. too many replicates unusable)."""


class CsvFormatError(McjackError):
    """Malformed input CSV; message carries row/column coordinates."""


class ConfigError(McjackError):
    """Invalid scenario configuration or command-line flags."""
