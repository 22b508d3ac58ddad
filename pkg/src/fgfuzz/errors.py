"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class FgfuzzError(Exception):
    """Base class for all toolkit errors."""


class ParseError(FgfuzzError):
    """Malformed model or campaign file."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}" + (f", column {column}" if column else "")
        super().__init__(f"{where}: {message}" if line else message)


class ModelReferenceError(FgfuzzError, ReferenceError):
    """A name in the model does not resolve to a declared element."""

    def __init__(self, name: str, context: str = ""):
        self.name = name
        msg = f"unknown name {name!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class UnknownTarget(FgfuzzError):
    """A fortification toggle targets an identifier the model lacks."""


class UnknownIdentifier(FgfuzzError, KeyError):
    pass


class UnknownCommand(FgfuzzError, KeyError):
    pass


class EmptyTargetSet(FgfuzzError):
    """The isolation report leaves nothing to fuzz."""


class MissingField(FgfuzzError):
    pass


class ValueOverflow(FgfuzzError):
    pass


class LengthMismatch(FgfuzzError):
    pass


class ConfigMismatch(FgfuzzError):
    """Plan and simulator configuration refer to different models."""


class UnknownScenario(FgfuzzError):
    pass


class NonTerminalTrace(FgfuzzError):
    pass


class ProvenanceMismatch(FgfuzzError):
    pass
