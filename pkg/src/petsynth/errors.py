"""Exception hierarchy shared across the package.

``DataError`` subclasses signal bad or missing on-disk inputs and map to
CLI exit code 2; everything else under ``PetSynthError`` maps to exit
code 3.
"""


class PetSynthError(Exception):
    """Base class for all package errors."""


class DataError(PetSynthError):
    """Bad, missing, or inconsistent input data."""


# --- phantoms ---------------------------------------------------------------

class InvalidSpec(PetSynthError):
    pass


class InvalidGrid(InvalidSpec):
    pass


class IoError(DataError):
    """Filesystem write/read failure while emitting artifacts."""


# --- datasets ---------------------------------------------------------------

class ChecksumMismatch(DataError):
    pass


class MissingFile(DataError):
    pass


class VersionMismatch(DataError):
    pass


class DegenerateRange(PetSynthError):
    pass


class EmptyPool(DataError):
    pass


# --- model ------------------------------------------------------------------

class ConfigError(PetSynthError):
    pass


class ShapeMismatch(PetSynthError):
    pass


# --- trainer ----------------------------------------------------------------

class ScheduleViolation(PetSynthError):
    pass


# --- evaluator --------------------------------------------------------------

class TooFewSubjects(DataError):
    pass


class DegenerateInput(PetSynthError):
    pass
