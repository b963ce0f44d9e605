"""Exception hierarchy shared across the package."""


class LlemaError(Exception):
    """Base class for all package errors."""


class EmptyComposition(LlemaError):
    pass


class DegenerateCell(LlemaError):
    pass


class InvalidLattice(LlemaError):
    pass


class UnknownElement(LlemaError):
    def __init__(self, symbol: str):
        super().__init__(f"unknown element symbol: {symbol!r}")
        self.symbol = symbol


class MissingTag(LlemaError):
    def __init__(self, name: str):
        super().__init__(f"missing mandatory CIF tag: {name}")
        self.name = name


class MalformedNumber(LlemaError):
    def __init__(self, line: str):
        super().__init__(f"unparseable number in line: {line!r}")
        self.line = line


class ValidationError(LlemaError):
    """Candidate payload failed structural validation; `reason` is machine-readable."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class PromptOnlyRule(LlemaError):
    pass


class NoValidSubstitute(LlemaError):
    pass


class UnknownTask(LlemaError):
    def __init__(self, name: str):
        super().__init__(f"unknown task: {name!r}")
        self.name = name


class InvalidConstraint(LlemaError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ZeroSeebeck(LlemaError):
    pass


class NoJsonFound(LlemaError):
    pass


class GeneratorUnavailable(LlemaError):
    pass


class ExhaustedAttempts(LlemaError):
    pass
