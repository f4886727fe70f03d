"""
probscale - Exceptions

DomainError      out-of-range arguments (usage errors)
ContractError    caller contract broken: sizes, union-bound split, provenance
EvaluationError  a predictor or sigma handle returned an unusable value
NumericalError   a linear solve or search failed
"""


class ProbScaleError(Exception):
    """Base class for every error raised by probscale"""


class DomainError(ProbScaleError, ValueError):
    """Argument outside the domain an operation is defined on"""


class InfeasibleSpecError(DomainError):
    """The (N, r) rule produced r = 0 for the requested levels"""


class ContractError(ProbScaleError):
    """Documented precondition between caller and library was violated"""


class DataFormatError(ContractError):
    """Malformed dataset or report file"""

    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EvaluationError(ProbScaleError):
    """Predictor or sigma handle produced a non-finite or nonpositive value"""

    def __init__(self, message: str, index: int = None):
        if index is not None:
            message = f"{message} (observation index {index})"
        super().__init__(message)
        self.index = index


class NumericalError(ProbScaleError, ArithmeticError):
    """Linear algebra failure, carries a condition-number diagnostic when known"""

    def __init__(self, message: str, condition: float = None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition
