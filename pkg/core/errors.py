"""
Error types - One exception class per failure kind raised by the toolkit
"""
from typing import Optional


class SoftCcaError(Exception):
    """Base class for every error the toolkit raises on purpose."""


class ShapeError(SoftCcaError, ValueError):
    pass


class NumericError(SoftCcaError):
    pass


class DegenerateInputError(SoftCcaError):
    """Zero variance, a batch too small for its statistics, a single-class fold."""


class StateError(SoftCcaError):
    pass


class ConfigError(SoftCcaError):

    def __init__(self, message: str, section: Optional[str] = None,
                 key: Optional[str] = None, line: Optional[int] = None):
        self.section = section
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DivergenceError(SoftCcaError):

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} at step {step}")


class FormatError(SoftCcaError):

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})" if offset is not None else message)


class CompatibilityError(SoftCcaError):
    pass


class IntegrityError(SoftCcaError):
    pass
