class SeisbenchError(Exception):
    pass


class SpecificationError(SeisbenchError, ValueError):
    """Invalid configuration or arguments."""


class ValidationError(SpecificationError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(SeisbenchError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class DataError(SeisbenchError, ValueError):
    """Input data violates a precondition (non-finite, unnormalized, ...)."""


class ShapeError(SeisbenchError, ValueError):
    pass


class NumericError(SeisbenchError, ArithmeticError):
    """Non-finite values appeared during training."""


class StateError(SeisbenchError, RuntimeError):
    pass
