"""BB84 protocol engine and its classical post-processing."""
from .amplify import privacy_amplify, toeplitz_hash, toeplitz_product
from .auth import AuthSecret, AuthTag, authenticate_message, verify_message
from .cascade import cascade, error_correct
from .session import (
    WORKED_EXAMPLE,
    AliceState,
    BobState,
    QkdSessionResult,
    ScriptedDraws,
    SessionParams,
    Status,
    estimate_qber,
    generate_raw,
    run_session,
    sift,
)
from .transcript import AuthenticationFailure, Message, Transcript

__all__ = [
    "WORKED_EXAMPLE", "AliceState", "AuthSecret", "AuthTag", "AuthenticationFailure", "BobState",
    "Message", "QkdSessionResult", "ScriptedDraws", "SessionParams", "Status", "Transcript",
    "authenticate_message", "cascade", "error_correct", "estimate_qber", "generate_raw",
    "privacy_amplify", "run_session", "sift", "toeplitz_hash", "toeplitz_product", "verify_message",
]
