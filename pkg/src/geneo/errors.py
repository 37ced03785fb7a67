"""Exception hierarchy shared by all modules."""


class GeneoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(GeneoError):
    """Operands have incompatible shapes."""


class NotSymmetric(GeneoError):
    """A matrix required to be symmetric is asymmetric beyond tolerance."""


class IndefiniteMatrix(GeneoError):
    """A pivot fell below the negative tolerance during factorization."""


class PencilNotDefinite(GeneoError):
    """The right-hand matrix of a generalized eigenproblem is not spd."""


class BreakdownNonpositivePivot(GeneoError):
    """IC(0) hit a nonpositive pivot; the factorization does not exist."""


class UnassignedElement(GeneoError):
    """A mesh element is not covered by the partition."""


class SingularAfterBC(GeneoError):
    """No Dirichlet condition present, assembled operator is singular."""


class TooManySubdomains(GeneoError):
    """Requested more subdomains than the partitioner can produce."""


class ZeroDiagonal(GeneoError):
    """A scaling denominator vanished."""


class UnsupportedVariant(GeneoError):
    """The requested preconditioner combination is not defined."""


class CoarseIsWholeSpace(GeneoError):
    """The coarse space has the dimension of the global space."""


class CoarseSingular(GeneoError):
    """The coarse operator could not be factorized."""


class LocalSolverSingular(GeneoError):
    """An operation requiring invertible local solvers met a singular one."""


class KernelNotInCoarseSpace(GeneoError):
    """A local solver kernel is not contained in the coarse space."""


class ProblemTooLarge(GeneoError):
    """Dense verification was requested above the size cap."""


class ConfigError(GeneoError):
    """Experiment configuration is inconsistent."""
