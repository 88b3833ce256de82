"""Exception hierarchy shared by all modules."""


class FeecError(Exception):
    """Base class for all errors raised by feec_proj."""


class MeshError(FeecError, ValueError):
    pass


class DegenerateCell(MeshError):
    pass


class DuplicateCell(MeshError):
    pass


class NonManifoldMesh(MeshError):
    pass


class ContractibilityCheckFailed(FeecError):
    pass


class DegreeMismatch(FeecError, ValueError):
    pass


class IncompatibleComplexSpec(FeecError, ValueError):
    pass


class IncompatibleSpaces(FeecError, ValueError):
    pass


class UnisolvenceFailure(FeecError):
    pass


class QuadratureOrderTooLow(FeecError, ValueError):
    pass


class SingularSystem(FeecError):
    """A local system was singular; usually a violated exactness precondition."""

    def __init__(self, message, patch=None):
        if patch is not None:
            message = f"{message} (patch {patch})"
        super().__init__(message)
        self.patch = patch


class InfeasibleTrace(FeecError):
    pass


class ConfigError(FeecError, ValueError):
    pass
