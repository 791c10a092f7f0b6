class DomainError(ValueError):
    """Input outside the domain of a model operation."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to produce a usable value."""


class ParseError(DomainError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line
