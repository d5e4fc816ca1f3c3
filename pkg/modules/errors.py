"""
Error conditions raised across CorrLeak
One class per named failure so callers (and the CLI exit codes) can tell them apart
"""


class CorrLeakError(Exception):
    """Base class for every CorrLeak failure"""


# Correlation matrices

class NotPositiveSemiDefinite(CorrLeakError, ValueError):
    """A Cholesky pivot fell below the negative tolerance"""


class IndexOrder(CorrLeakError, ValueError):
    """Coefficient bounds requested for an entry on or above the diagonal"""


class InfeasibleConstraints(CorrLeakError, ValueError):
    """The known correlations admit no positive semi-definite completion"""


class InvalidMatrix(CorrLeakError, ValueError):
    """A matrix handed to the copula is not a valid correlation matrix"""


# Marginals and datasets

class DomainError(CorrLeakError, ValueError):
    """Probability outside the open unit interval"""


class ZeroVariance(CorrLeakError, ValueError):
    """A column is constant, so its Pearson correlation is undefined"""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"Column {column!r} has zero variance")


class DegenerateSupport(CorrLeakError, ValueError):
    """Samples span a single point, no sub-intervals can be built"""


# Models

class SingleClass(CorrLeakError, ValueError):
    """Training labels contain only one class"""


class ShapeMismatch(CorrLeakError, ValueError):
    """Input width does not match the model or the query dataset"""


# Attacks

class OutOfRange(CorrLeakError, ValueError):
    """Correlation value outside [-1, 1]"""


class UnsupportedB(CorrLeakError, ValueError):
    """The certain-region analysis only exists for three bins"""


class DegenerateLabels(CorrLeakError):
    """All shadow datasets fell in the same correlation bin"""


class NoSurvivingDatasets(CorrLeakError):
    """No synthetic dataset matched the inferred correlation bins"""


class NoMatchingLabel(CorrLeakError):
    """The synthetic pool holds no record with the target record's label"""


# Harness

class ConfigError(CorrLeakError, ValueError):
    """Invalid experiment configuration"""


class ParseError(CorrLeakError):
    """A data file could not be parsed"""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class SchemaError(CorrLeakError):
    """Columns missing, unexpected, or unusable"""

    def __init__(self, message, columns=()):
        self.columns = list(columns)
        if self.columns:
            message = f"{message}: {', '.join(map(str, self.columns))}"
        super().__init__(message)
