"""TULIP: an SSO front door that serves the credential login page only to
devices holding a valid enrollment token."""

from .tokens import (
    CookiePolicy,
    EnrollmentToken,
    SigningKeyring,
    decode_cookie,
    encode_cookie,
    mint_token,
    verify_token,
)
from .store import IdentityStore, QuotaResult, ScryptParams, UserRecord
from .enroll import (
    ChallengeDefinition,
    ChallengePolicy,
    EnrollmentRequest,
    EnrollmentOutcome,
    enroll,
)
from .gate import GateDecision, LoginAttempt, SessionGrant, gate, process_login
from .admin import AdminService, AuditLog
from .service import TulipService, start_in_thread

__all__ = [
    "AdminService",
    "AuditLog",
    "ChallengeDefinition",
    "ChallengePolicy",
    "CookiePolicy",
    "EnrollmentOutcome",
    "EnrollmentRequest",
    "EnrollmentToken",
    "GateDecision",
    "IdentityStore",
    "LoginAttempt",
    "QuotaResult",
    "ScryptParams",
    "SessionGrant",
    "SigningKeyring",
    "TulipService",
    "UserRecord",
    "decode_cookie",
    "encode_cookie",
    "enroll",
    "gate",
    "mint_token",
    "process_login",
    "start_in_thread",
    "verify_token",
]
