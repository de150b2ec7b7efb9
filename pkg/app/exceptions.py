"""Exception hierarchy shared by every service.

User-facing problems derive from ``NLIToolkitError`` and map to CLI exit code 1;
``InvariantViolation`` signals an internal bug and maps to exit code 2.
"""
from typing import Optional


class NLIToolkitError(Exception):
    """Base class for errors caused by bad input or configuration."""


class CorpusFormatError(NLIToolkitError):
    """A corpus line could not be decoded."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TreeParseError(NLIToolkitError):
    """A bracketed parse string is malformed."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class RuleSyntaxError(NLIToolkitError):
    """The rule DSL source does not match the grammar."""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class UnknownPredicateError(RuleSyntaxError):
    """An atom names a predicate other than ent, con or neu."""


class RuleValidationError(NLIToolkitError):
    """A syntactically valid rule violates a structural constraint."""


class GroundingError(NLIToolkitError):
    """A rule variable has no binding in the substitution."""


class ContractViolation(NLIToolkitError):
    """An operation was called outside its precondition."""


class NumericError(NLIToolkitError):
    """Parameters or intermediate values are not finite."""


class ArgumentError(NLIToolkitError):
    """An argument value is out of range."""


class CheckpointFormatError(NLIToolkitError):
    """A checkpoint or language model file could not be read."""


class InvariantViolation(Exception):
    """An internal invariant failed; indicates a bug rather than bad input."""
