from .service import (
    AuthenticationFailed,
    AuthorizationError,
    ConflictError,
    NotFoundError,
    SessionToken,
    UserRecord,
    ValidationError,
    VaultEntry,
    VaultError,
    VaultService,
)

__all__ = [
    "AuthenticationFailed", "AuthorizationError", "ConflictError", "NotFoundError", "SessionToken",
    "UserRecord", "ValidationError", "VaultEntry", "VaultError", "VaultService",
]
