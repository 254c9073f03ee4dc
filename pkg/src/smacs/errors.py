"""Exception hierarchy shared by every SMACS module."""


class SmacsError(Exception):
    """Base class for all errors raised by this package."""


# token codec / crypto

class CodecError(SmacsError, ValueError):
    pass


class ShapeMismatch(CodecError):
    """Request fields do not match the shape required by its token type."""


class BadLength(CodecError):
    pass


class BadType(CodecError):
    pass


class Malformed(CodecError):
    pass


class MalformedSignature(CodecError):
    pass


class NotFound(SmacsError, LookupError):
    """No token in a token array is addressed to the requested contract."""


# bitmap

class InvalidSize(SmacsError, ValueError):
    pass


class NoFreeCell(SmacsError):
    """``seek`` found no free cell far enough ahead of the start pointer."""


# rules

class RuleError(SmacsError):
    pass


class ParseError(RuleError, ValueError):
    pass


class BothListsInOneScope(RuleError, ValueError):
    pass


class UnknownValidator(RuleError, ValueError):
    pass


class NoSuchScope(RuleError, KeyError):
    pass


# validators

class ValidatorError(SmacsError):
    pass


class HeadConfigError(ValidatorError, ValueError):
    """N-version check invoked with fewer than two usable heads."""


# chain simulator

class ChainError(SmacsError):
    pass


class BadSignature(ChainError):
    pass


class NonceUsed(ChainError):
    pass


class BadNonce(ChainError):
    pass


class UnknownContract(ChainError, LookupError):
    pass


class ClockRegression(ChainError, ValueError):
    pass


class Reverted(ChainError):
    """Raised inside contract execution; aborts and rolls back the transaction."""

    def __init__(self, reason: str, site: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.site = site


# token service

class ServiceError(SmacsError):
    pass


class Denied(ServiceError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Unauthorized(ServiceError):
    pass


class PersistenceFailure(ServiceError):
    pass
