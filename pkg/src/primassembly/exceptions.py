"""Exception hierarchy shared by every module."""


class PrimAssemblyError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(PrimAssemblyError, ValueError):
    pass


class UnknownClassError(PrimAssemblyError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown primitive class"


class EmptyAssemblyError(PrimAssemblyError, ValueError):
    pass


class DegenerateInputError(PrimAssemblyError, ValueError):
    pass


class ContractViolationError(PrimAssemblyError, ValueError):
    """A caller broke a documented precondition (e.g. non-canonical input)."""


class SequenceLengthError(PrimAssemblyError, ValueError):
    pass


class InsufficientInputError(PrimAssemblyError, ValueError):
    pass


class ConfigError(PrimAssemblyError, ValueError):
    pass


class DatasetParseError(PrimAssemblyError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionError(PrimAssemblyError, ValueError):
    pass


class NonFiniteLossError(PrimAssemblyError, RuntimeError):
    def __init__(self, step, sample_ids, breakdown=None):
        self.step = step
        self.sample_ids = list(sample_ids)
        self.breakdown = breakdown
        super().__init__(
            f"non-finite loss at step {step} (samples: {', '.join(map(str, self.sample_ids))})"
        )
