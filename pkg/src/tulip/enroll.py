"""Enrollment procedure: token-reuse check, credential check, challenge
pipeline, quota consumption, and token minting.

The flow is a small finite state machine. Every outcome carries the ordered
trace of visited states so tests can assert exact path conformance. The
challenge pipeline is fail-closed and constant-work: all challenges are
evaluated even once a failure is known.
"""

from __future__ import annotations

import enum
import hmac
import ipaddress
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from . import tokens, totp
from .store import IdentityStore, QuotaResult, UserRecord


class EnrollState(enum.Enum):
    RECEIVED = "received"            # request arrives
    TOKEN_CHECK = "token_check"      # a presented token is being validated
    VALIDATION = "validation"        # credential + challenge evaluation
    QUOTA_CHECK = "quota_check"      # remaining-enrollment gate
    ACCEPTED = "accepted"
    DECLINED = "declined"


# Transition structure of the enrollment machine, kept as data so tests can
# enumerate paths exhaustively.
ENROLL_TRANSITIONS = {
    EnrollState.RECEIVED: {
        "token_present": EnrollState.TOKEN_CHECK,
        "token_absent": EnrollState.VALIDATION,
    },
    EnrollState.TOKEN_CHECK: {
        "token_valid": EnrollState.ACCEPTED,
        "token_invalid": EnrollState.VALIDATION,
    },
    EnrollState.VALIDATION: {
        "authn_valid": EnrollState.QUOTA_CHECK,
        "authn_invalid": EnrollState.DECLINED,
        "challenge_failed": EnrollState.DECLINED,
    },
    EnrollState.QUOTA_CHECK: {
        "quota_available": EnrollState.ACCEPTED,
        "quota_exhausted": EnrollState.DECLINED,
    },
}

CHALLENGE_KINDS = ("network_allowlist", "group_membership", "static_attribute", "totp")


@dataclass(frozen=True)
class ChallengeDefinition:
    id: str
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CHALLENGE_KINDS:
            raise ValueError(f"unknown challenge kind {self.kind!r}")


@dataclass(frozen=True)
class ChallengePolicy:
    """Ordered, fail-closed challenge pipeline."""

    challenges: Sequence[ChallengeDefinition] = ()

    def descriptor(self) -> List[dict]:
        """Field list published to the enrollment form."""
        out = []
        for ch in self.challenges:
            entry = {"id": ch.id, "kind": ch.kind}
            if ch.kind in ("static_attribute", "totp"):
                entry["input"] = True
                entry["label"] = str(ch.params.get("label", ch.id))
            else:
                entry["input"] = False
            out.append(entry)
        return out


@dataclass
class EnrollmentRequest:
    username: str
    password: str
    presented_token: Optional[str] = None
    challenge_responses: Dict[str, str] = field(default_factory=dict)
    client_network_address: str = ""


@dataclass
class EnrollmentOutcome:
    accepted: bool
    token: Optional[str]           # newly minted token, absent when reused
    reused: bool                   # a still-valid token was presented
    reason: Optional[str]          # internal reason-class; never shown externally
    trace: List[EnrollState]


def evaluate_challenge(
    definition: ChallengeDefinition,
    request: EnrollmentRequest,
    user: Optional[UserRecord],
    now: int,
) -> bool:
    """Evaluate one challenge. Missing responses or missing user data fail."""
    if definition.kind == "network_allowlist":
        cidrs = definition.params.get("cidrs", [])
        try:
            addr = ipaddress.ip_address(request.client_network_address)
        except ValueError:
            return False
        return any(addr in ipaddress.ip_network(c) for c in cidrs)
    if user is None:
        return False
    if definition.kind == "group_membership":
        return user.enrollment_group_member
    if definition.kind == "static_attribute":
        attr_name = str(definition.params.get("attribute", definition.id))
        stored = user.attributes.get(attr_name)
        response = request.challenge_responses.get(definition.id)
        if stored is None or response is None:
            return False
        return hmac.compare_digest(stored.encode(), response.encode())
    if definition.kind == "totp":
        response = request.challenge_responses.get(definition.id)
        if not user.totp_secret or response is None:
            return False
        return totp.verify_code(user.totp_secret, response, now)
    return False


def _token_still_valid(presented: str, store: IdentityStore,
                       keyring: tokens.SigningKeyring, now: int) -> bool:
    """Full validity for the reuse path: signature, expiry, AND current
    version. A revoked token must fall through to re-enrollment."""
    try:
        claims = tokens.verify_token(presented, now, keyring)
    except tokens.VerificationError:
        return False
    return store.read_version(claims.ouid) == claims.version


def enroll(
    request: EnrollmentRequest,
    store: IdentityStore,
    keyring: tokens.SigningKeyring,
    policy: ChallengePolicy,
    now: int,
    token_lifetime: int = 180 * 24 * 3600,
) -> EnrollmentOutcome:
    """Run the enrollment procedure over an untrusted request."""
    trace = [EnrollState.RECEIVED]

    if request.presented_token:
        trace.append(EnrollState.TOKEN_CHECK)
        if _token_still_valid(request.presented_token, store, keyring, now):
            trace.append(EnrollState.ACCEPTED)
            return EnrollmentOutcome(True, None, True, None, trace)
        # Invalid or revoked token: discard it and run the full procedure.

    trace.append(EnrollState.VALIDATION)
    authn_ok = store.verify_credentials(request.username, request.password)
    user = store.find_by_username(request.username)
    # Constant work: evaluate the whole pipeline regardless of earlier failures.
    challenge_failures = [
        ch.id for ch in policy.challenges
        if not evaluate_challenge(ch, request, user, now)
    ]
    if not authn_ok:
        trace.append(EnrollState.DECLINED)
        return EnrollmentOutcome(False, None, False, "invalid_credentials", trace)
    if challenge_failures:
        trace.append(EnrollState.DECLINED)
        return EnrollmentOutcome(False, None, False, "challenge_failed", trace)

    trace.append(EnrollState.QUOTA_CHECK)
    if store.try_consume_enrollment(request.username) is QuotaResult.EXHAUSTED:
        trace.append(EnrollState.DECLINED)
        return EnrollmentOutcome(False, None, False, "quota_exhausted", trace)
    try:
        minted = tokens.mint_token(user, now, token_lifetime, keyring)
    except Exception:
        store.restore_enrollment(request.username)
        trace.append(EnrollState.DECLINED)
        return EnrollmentOutcome(False, None, False, "internal_error", trace)
    trace.append(EnrollState.ACCEPTED)
    return EnrollmentOutcome(True, minted, False, None, trace)
