"""Enrollment token minting, verification, and cookie transport.

Tokens are compact JWS-style strings: base64url(header).base64url(claims).
base64url(mac), signed with HMAC-SHA256. Claims carry exactly four fields --
the opaque user id, the revocation version, issue time, and expiry -- and
nothing else. Verification is a pure function of the token bytes, the clock,
and the keyring; it never touches the identity store.
"""

from __future__ import annotations

import base64
import binascii
import hmac
import hashlib
import json
from dataclasses import dataclass
from http.cookies import SimpleCookie
from types import MappingProxyType
from typing import Mapping, Optional

CLAIM_KEYS = frozenset({"ouid", "ver", "iat", "exp"})
MIN_KEY_BYTES = 32


class TokenError(Exception):
    """Base class for token handling errors."""


class ConfigurationError(TokenError):
    """A caller-side precondition was violated (e.g. user without an ouid)."""


class KeyMaterialError(TokenError):
    """Signing key material is missing or too short."""


class VerificationError(TokenError):
    """Base class for verification failures. Callers must collapse all
    subclasses to one uniform external rejection."""


class MalformedToken(VerificationError):
    """Not a three-segment base64url structure with the expected schema."""


class UnknownKey(VerificationError):
    """Header references a key id not present in the keyring."""


class BadSignature(VerificationError):
    """MAC does not match."""


class Expired(VerificationError):
    """Structurally valid and correctly signed, but past expiry."""


@dataclass(frozen=True)
class EnrollmentToken:
    """Decoded claims of an enrollment token."""

    ouid: str
    version: int
    issued_at: int
    expires_at: int
    key_id: str


class SigningKeyring:
    """Holds MAC keys by id. Minting uses only the active key; verification
    accepts any retained key, which makes rotation non-breaking."""

    def __init__(self, active_key_id: str, keys: Mapping[str, bytes]):
        if active_key_id not in keys:
            raise KeyMaterialError(f"active key {active_key_id!r} not in keyring")
        for kid, material in keys.items():
            if len(material) < MIN_KEY_BYTES:
                raise KeyMaterialError(f"key {kid!r} shorter than {MIN_KEY_BYTES} bytes")
        self.active_key_id = active_key_id
        self.keys: Mapping[str, bytes] = MappingProxyType(dict(keys))

    def active_key(self) -> bytes:
        return self.keys[self.active_key_id]

    def rotated(self, new_key_id: str, material: bytes) -> "SigningKeyring":
        """Return a new keyring with `new_key_id` active and old keys retained."""
        merged = dict(self.keys)
        merged[new_key_id] = material
        return SigningKeyring(new_key_id, merged)


@dataclass(frozen=True)
class CookiePolicy:
    """How the token rides in the browser. HttpOnly and Secure are not
    configurable: they are always emitted."""

    name: str = "tulip_token"
    same_site: str = "Lax"
    max_age: int = 180 * 24 * 3600

    def __post_init__(self):
        if self.same_site not in ("Lax", "Strict"):
            raise ValueError(f"same_site must be Lax or Strict, got {self.same_site!r}")


def _b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(segment: str) -> bytes:
    # Re-pad; reject anything that is not clean base64url.
    if not segment:
        raise MalformedToken("empty segment")
    pad = (-len(segment)) % 4
    try:
        decoded = base64.urlsafe_b64decode(segment + "=" * pad)
    except (binascii.Error, ValueError) as exc:
        raise MalformedToken(f"bad base64url segment: {exc}") from None
    # Canonical form only: stray bits in the final character must not decode
    # to the same bytes, or single-bit tampering could go unnoticed.
    if _b64url_encode(decoded) != segment:
        raise MalformedToken("non-canonical base64url segment")
    return decoded


def mint_token(user, now: int, lifetime: int, keyring: SigningKeyring) -> str:
    """Serialize and sign a token mirroring the user's current ouid/version.

    Deterministic for identical inputs: there are no random claims.
    `user` needs `sso_jwt_ouid` and `sso_jwt_version` attributes.
    """
    ouid = getattr(user, "sso_jwt_ouid", None)
    if not ouid:
        raise ConfigurationError("user record has no ouid; cannot mint")
    if lifetime <= 0:
        raise ConfigurationError("token lifetime must be positive")
    now = int(now)
    header = {"alg": "HS256", "kid": keyring.active_key_id, "typ": "JWT"}
    claims = {
        "ouid": ouid,
        "ver": int(user.sso_jwt_version),
        "iat": now,
        "exp": now + int(lifetime),
    }
    assert set(claims) == CLAIM_KEYS
    h = _b64url_encode(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
    c = _b64url_encode(json.dumps(claims, sort_keys=True, separators=(",", ":")).encode())
    signing_input = f"{h}.{c}".encode("ascii")
    mac = hmac.new(keyring.active_key(), signing_input, hashlib.sha256).digest()
    return f"{h}.{c}.{_b64url_encode(mac)}"


def verify_token(serialized: str, now: int, keyring: SigningKeyring) -> EnrollmentToken:
    """Verify an untrusted token string and return its claims.

    Checks, in order: three-segment structure, header schema, known key id,
    MAC (constant-time), claim schema, expiry. Raises a distinct
    VerificationError subclass per failure mode. Performs no store access.
    """
    if not isinstance(serialized, str):
        raise MalformedToken("token is not text")
    parts = serialized.split(".")
    if len(parts) != 3:
        raise MalformedToken(f"expected 3 segments, got {len(parts)}")
    h_seg, c_seg, m_seg = parts
    header_bytes = _b64url_decode(h_seg)
    claims_bytes = _b64url_decode(c_seg)
    mac = _b64url_decode(m_seg)
    try:
        header = json.loads(header_bytes)
        claims = json.loads(claims_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedToken(f"segment is not JSON: {exc}") from None
    if not isinstance(header, dict) or not isinstance(claims, dict):
        raise MalformedToken("header/claims are not objects")
    if header.get("alg") != "HS256" or header.get("typ") != "JWT":
        raise MalformedToken("unexpected header schema")
    kid = header.get("kid")
    if not isinstance(kid, str) or kid not in keyring.keys:
        raise UnknownKey(f"unknown key id {kid!r}")
    signing_input = f"{h_seg}.{c_seg}".encode("ascii")
    expected = hmac.new(keyring.keys[kid], signing_input, hashlib.sha256).digest()
    if not hmac.compare_digest(expected, mac):
        raise BadSignature("MAC mismatch")
    if set(claims) != CLAIM_KEYS:
        raise MalformedToken(f"unexpected claim keys {sorted(claims)}")
    if (
        not isinstance(claims["ouid"], str)
        or not claims["ouid"]
        or not isinstance(claims["ver"], int)
        or claims["ver"] < 0
        or not isinstance(claims["iat"], int)
        or not isinstance(claims["exp"], int)
    ):
        raise MalformedToken("claim values have wrong types")
    if claims["exp"] <= claims["iat"]:
        raise MalformedToken("expiry not after issue time")
    if int(now) >= claims["exp"]:
        raise Expired("token past expiry")
    return EnrollmentToken(
        ouid=claims["ouid"],
        version=claims["ver"],
        issued_at=claims["iat"],
        expires_at=claims["exp"],
        key_id=kid,
    )


def encode_cookie(token: str, policy: CookiePolicy = CookiePolicy()) -> str:
    """Build the Set-Cookie header value carrying the token."""
    if not token:
        raise ValueError("empty token")
    return (
        f"{policy.name}={token}; Max-Age={policy.max_age}; Path=/; "
        f"HttpOnly; Secure; SameSite={policy.same_site}"
    )


def decode_cookie(headers, policy: CookiePolicy = CookiePolicy()) -> Optional[str]:
    """Extract the token from request headers, or None.

    `headers` is any mapping with .get (e.g. http.client headers). Garbage
    cookie headers yield None rather than an error.
    """
    raw = headers.get("Cookie") if hasattr(headers, "get") else None
    if not raw:
        return None
    jar = SimpleCookie()
    try:
        jar.load(raw)
    except Exception:
        return None
    morsel = jar.get(policy.name)
    return morsel.value if morsel is not None and morsel.value else None
