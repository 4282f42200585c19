# errors.py
from typing import Any, List, Optional


class MarkovDynamicsError(Exception):
    """Base class for every failure raised by the engine."""


class SingularPointError(MarkovDynamicsError):
    def __init__(self, message: str, point: Any = None, partial: Any = None) -> None:
        super().__init__(message)
        self.point = point
        self.partial = partial


class FrameMismatchError(MarkovDynamicsError):
    def __init__(self, message: str, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.residual = residual


class NonRealInputError(MarkovDynamicsError, ValueError):
    pass


class NoCompactComponentError(MarkovDynamicsError):
    pass


class EnvelopeViolation(MarkovDynamicsError):
    def __init__(self, message: str, point: Any = None, ratio: float = float("nan"), bound: float = float("nan")) -> None:
        super().__init__(message)
        self.point = point
        self.ratio = ratio
        self.bound = bound


class EscapeError(MarkovDynamicsError):
    def __init__(self, message: str, step: Optional[int] = None, partial: Any = None) -> None:
        super().__init__(message)
        self.step = step
        self.partial = partial


class NotNearInfinity(MarkovDynamicsError):
    pass


class NewtonDivergence(MarkovDynamicsError):
    def __init__(self, message: str, iterates: Optional[List[Any]] = None) -> None:
        super().__init__(message)
        self.iterates = list(iterates or [])


class IndeterminacyError(MarkovDynamicsError):
    def __init__(self, message: str, letter: Any = None, chart: Any = None) -> None:
        super().__init__(message)
        self.letter = letter
        self.chart = chart


class CertificateFailure(MarkovDynamicsError):
    def __init__(self, message: str, step: Optional[int] = None, trace: Optional[List[dict]] = None) -> None:
        super().__init__(message)
        self.step = step
        self.trace = list(trace or [])


class GrowthLemmaViolation(MarkovDynamicsError):
    def __init__(self, message: str, witness: Optional[dict] = None) -> None:
        super().__init__(message)
        self.witness = witness or {}


class EmptyReduction(MarkovDynamicsError):
    pass


class ToleranceCollision(MarkovDynamicsError):
    def __init__(self, message: str, first: Any = None, second: Any = None) -> None:
        super().__init__(message)
        self.first = first
        self.second = second


class ParabolicBoundary(MarkovDynamicsError):
    pass


class CatalogAssertionError(MarkovDynamicsError, AssertionError):
    pass


class ConfigError(MarkovDynamicsError):
    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None) -> None:
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line
