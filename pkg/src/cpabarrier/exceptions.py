"""Exception hierarchy shared across the package."""


class CpaBarrierError(Exception):
    """Base class for all package errors."""


class DegenerateInput(CpaBarrierError, ValueError):
    """Point set cannot be triangulated (collinear, duplicated, too few)."""


class UnsupportedDimension(CpaBarrierError, ValueError):
    pass


class SingularSimplex(CpaBarrierError, ValueError):
    """The vertex-difference matrix of a simplex is numerically singular."""


class OutsideDomain(CpaBarrierError, ValueError):
    """A query point lies outside the triangulated domain."""


class SchemaError(CpaBarrierError, ValueError):
    """A data file does not follow the expected CSV/JSON schema."""


class OracleFailure(CpaBarrierError, RuntimeError):
    pass


class InputOutOfRange(CpaBarrierError, ValueError):
    pass


class NumericalBreakdown(CpaBarrierError, ArithmeticError):
    """The interior-point KKT system could not be factorized."""


class AssemblyError(CpaBarrierError, RuntimeError):
    pass


class EmptyDataset(CpaBarrierError, ValueError):
    pass


class DimensionMismatch(CpaBarrierError, ValueError):
    pass
