"""Exception types raised across the package."""


class LsatError(Exception):
    """Base class for all errors raised by lsat."""


class DimensionMismatch(LsatError, ValueError):
    pass


class RankDeficient(LsatError, ArithmeticError):
    """Gram matrix Cholesky hit a non-positive (or negligible) pivot."""


class SingularKkt(LsatError, ArithmeticError):
    """KKT matrix is singular or numerically close to singular."""


class NoConvergence(LsatError, ArithmeticError):
    """An iterative solve exceeded its iteration budget.

    ``columns`` lists the right-hand-side columns that did not converge.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class AdjointInconsistent(LsatError, ValueError):
    pass


class NonFiniteObjective(LsatError, ArithmeticError):
    pass


class DataError(LsatError):
    """Problems reading or splitting a dataset."""


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class ConfigError(LsatError, ValueError):
    pass
