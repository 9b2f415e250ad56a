"""Exception hierarchy shared by every module.

Two families matter to the command line: ``InputError`` (malformed input,
exit code 1) and ``DomainError`` (well-formed input that violates a
mathematical precondition, exit code 2).
"""

from __future__ import annotations


class SecoordError(Exception):
    """Base class for all package errors."""


class InputError(SecoordError):
    """Input could not be parsed."""


class DomainError(SecoordError):
    """Input parsed but violates a precondition."""


# probcore
class NegativeProbability(DomainError):
    pass


class NotNormalized(DomainError):
    pass


class DimensionMismatch(DomainError):
    pass


class UnknownVariable(DomainError):
    pass


class VariableCollision(DomainError):
    pass


class AlphabetMismatch(DomainError):
    pass


class TableTooLarge(DomainError):
    pass


# factorize
class MissingFactor(DomainError):
    pass


class SourcesNotConditionallyIndependent(DomainError):
    pass


# regions
class EpsOutOfRange(DomainError):
    pass


class ChannelNotDeterministic(DomainError):
    pass


class ChannelNotNoiselessLinks(DomainError):
    pass


class NoFeasiblePointFound(SecoordError):
    pass


# fme
class ParseError(InputError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class NonCanonicalAtom(InputError):
    pass


class MissingAtom(DomainError):
    pass


# osrbsim
class EnumerationTooLarge(DomainError):
    pass
