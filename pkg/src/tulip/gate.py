"""Login gate: decide whether the login page may be rendered and whether a
login POST may be processed at all.

The ladder is strict: presence (no store calls), signature+expiry (no store
calls), then exactly one store read for the version comparison. Form data is
never touched unless the gate serves -- that ordering is the whole point.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass
from typing import List, Optional

from . import tokens
from .store import IdentityStore


class GateState(enum.Enum):
    RECEIVED = "received"
    TOKEN_CHECK = "token_check"
    SERVED = "served"
    REJECTED = "rejected"


GATE_TRANSITIONS = {
    GateState.RECEIVED: {
        "token_present": GateState.TOKEN_CHECK,
        "token_absent": GateState.REJECTED,
    },
    GateState.TOKEN_CHECK: {
        "token_valid": GateState.SERVED,
        "token_invalid": GateState.REJECTED,
    },
}


class GateReason(enum.Enum):
    NO_TOKEN = "no_token"
    BAD_SIGNATURE = "bad_signature"
    EXPIRED = "expired"
    UNKNOWN_OUID = "unknown_ouid"
    VERSION_MISMATCH = "version_mismatch"


@dataclass
class GateDecision:
    serve: bool
    reason: Optional[GateReason]   # internal only; external rejections are uniform
    trace: List[GateState]
    ouid: Optional[str] = None
    username_ouid_version: Optional[int] = None


@dataclass
class LoginAttempt:
    username: str
    password: str
    presented_token: Optional[str] = None


@dataclass
class SessionGrant:
    session_id: str
    username: str


@dataclass
class LoginOutcome:
    grant: Optional[SessionGrant]
    gate: GateDecision
    reason: Optional[str]          # "bad_credentials" when gated in but creds fail


def gate(
    presented_token: Optional[str],
    store: IdentityStore,
    keyring: tokens.SigningKeyring,
    now: int,
) -> GateDecision:
    """Run the presence -> signature/expiry -> version ladder."""
    trace = [GateState.RECEIVED]
    if not presented_token:
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.NO_TOKEN, trace)

    trace.append(GateState.TOKEN_CHECK)
    try:
        claims = tokens.verify_token(presented_token, now, keyring)
    except tokens.Expired:
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.EXPIRED, trace)
    except tokens.VerificationError:
        # Malformed, unknown key, and MAC mismatch all land in one class.
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.BAD_SIGNATURE, trace)

    try:
        stored_version = store.read_version(claims.ouid)
    except Exception:
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.UNKNOWN_OUID, trace)
    if stored_version is None:
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.UNKNOWN_OUID, trace, ouid=claims.ouid)
    if stored_version != claims.version:
        trace.append(GateState.REJECTED)
        return GateDecision(False, GateReason.VERSION_MISMATCH, trace, ouid=claims.ouid)
    trace.append(GateState.SERVED)
    return GateDecision(True, None, trace, ouid=claims.ouid,
                        username_ouid_version=stored_version)


def process_login(
    attempt: LoginAttempt,
    store: IdentityStore,
    keyring: tokens.SigningKeyring,
    now: int,
) -> LoginOutcome:
    """Gate first; only a served request ever has its form data read."""
    decision = gate(attempt.presented_token, store, keyring, now)
    if not decision.serve:
        return LoginOutcome(None, decision, None)
    if not store.verify_credentials(attempt.username, attempt.password):
        return LoginOutcome(None, decision, "bad_credentials")
    grant = SessionGrant(session_id=secrets.token_hex(16), username=attempt.username)
    return LoginOutcome(grant, decision, None)
