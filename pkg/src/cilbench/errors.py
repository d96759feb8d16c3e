"""Exception hierarchy shared across the harness.

UsageError and DataError map to distinct CLI exit codes (2 and 3); anything
else that escapes the command layer exits 1.
"""


class CilbenchError(Exception):
    """Base class for all harness errors."""


class UsageError(CilbenchError):
    """Bad command-line arguments or an unusable config."""


class DataError(CilbenchError):
    """Invalid input data or a violated data contract."""


# -- manifests and plans ------------------------------------------------------

class MalformedManifestError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class IndivisibleClassesError(DataError):
    pass


class MissingGroupingError(DataError):
    pass


class GroupArityError(DataError):
    pass


class CoverageError(DataError):
    pass


# -- clustering ---------------------------------------------------------------

class InfeasibleKError(DataError):
    pass


class InvalidFeatureError(DataError):
    pass


# -- losses -------------------------------------------------------------------

class UndefinedSimilarityError(DataError):
    pass


class InvalidTemperatureError(DataError):
    pass


class LabelError(DataError):
    pass


class ClassAlignmentError(DataError):
    pass


# -- models -------------------------------------------------------------------

class RegistryError(DataError):
    pass


class InputShapeError(DataError):
    pass


class CheckpointIntegrityError(DataError):
    pass


# -- training -----------------------------------------------------------------

class EmptyPhaseError(DataError):
    pass


class LeakageError(DataError):
    pass


class MemoryCapacityError(DataError):
    pass


# -- evaluation ---------------------------------------------------------------

class LepUndefinedError(DataError):
    pass


class DetailUndefinedError(DataError):
    pass


class DegenerateProbeError(DataError):
    pass


class InsufficientDataError(DataError):
    pass
