"""Exception hierarchy shared by every module of the package."""


class CohFluctError(Exception):
    """Base class for all package errors."""

    #: short machine-readable code used by the CLI error report
    code = "Error"


class NonHermitianInput(CohFluctError, ValueError):
    code = "NonHermitianInput"


class NonUnitaryInput(CohFluctError, ValueError):
    code = "NonUnitaryInput"


class InvalidState(CohFluctError, ValueError):
    code = "InvalidState"


class InvalidBeta(CohFluctError, ValueError):
    code = "InvalidBeta"


class AngleOutOfRange(CohFluctError, ValueError):
    code = "AngleOutOfRange"


class DimensionMismatch(CohFluctError, ValueError):
    code = "DimensionMismatch"


class EigenTrackingAmbiguous(CohFluctError, RuntimeError):
    """Eigenbranches cannot be matched between adjacent grid points; refine the grid."""

    code = "EigenTrackingAmbiguous"


class InvalidTrajectory(CohFluctError, ValueError):
    code = "InvalidTrajectory"


class MismatchedProtocol(CohFluctError, ValueError):
    code = "MismatchedProtocol"


class InvalidExposure(CohFluctError, ValueError):
    code = "InvalidExposure"


class EmptyRecord(CohFluctError, ValueError):
    code = "EmptyRecord"


class ConfigParse(CohFluctError, ValueError):
    code = "ConfigParse"


class MissingField(ConfigParse):
    code = "MissingField"


class IOFailure(CohFluctError, OSError):
    code = "IOFailure"


class SpectrumChangeWarning(UserWarning):
    """The second TPM measurement uses a Hamiltonian with a different spectrum."""
