"""Exception types shared across the package."""


class QkdVaultError(Exception):
    """Base class for all package errors."""


class InsufficientKeyError(QkdVaultError):
    """Not enough key material survives for the requested step."""


class ReconciliationError(QkdVaultError):
    """Error correction left Alice's and Bob's strings different."""


class SessionCorruptionError(QkdVaultError):
    """Protocol state from the two parties does not line up."""


class AuthCounterError(QkdVaultError):
    """An authentication counter would repeat."""


class KeyLengthError(QkdVaultError):
    pass


class KeyReuseError(QkdVaultError):
    """A one-time key was offered for a second encryption."""


class WrongKeyError(QkdVaultError):
    pass


class DemoInapplicableError(QkdVaultError):
    pass


class KeyExhaustedError(QkdVaultError):
    """The key pool cannot cover the request; run more QKD sessions."""


class PoolCorruptError(QkdVaultError):
    """A persisted key pool failed validation."""
