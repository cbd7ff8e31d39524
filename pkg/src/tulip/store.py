"""Identity store: user records and the three enrollment attributes.

An in-memory map with file persistence, behind the same interface an
LDAP/AD adapter would implement. All mutations are atomic under a single
lock; `try_consume_enrollment` is linearizable. Every public data access
bumps an access counter so tests can assert exactly how many back-end
calls an operation performed.
"""

from __future__ import annotations

import base64
import collections
import enum
import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, List, Optional

SCHEMA_VERSION = 1


class StoreError(Exception):
    pass


class UnknownUserError(StoreError):
    pass


class DuplicateError(StoreError):
    pass


class StoreFormatError(StoreError):
    """Persistence file is unreadable or carries the wrong schema."""


@dataclass(frozen=True)
class ScryptParams:
    """Cost parameters for the memory-hard password hash. The defaults are
    interactive-login strength; simulations dial them down."""

    log_n: int = 14
    r: int = 8
    p: int = 1


def hash_password(password: str, params: ScryptParams = ScryptParams()) -> str:
    """Hash with per-user random salt. Self-describing verifier string."""
    salt = os.urandom(16)
    digest = hashlib.scrypt(
        password.encode("utf-8"), salt=salt, n=1 << params.log_n,
        r=params.r, p=params.p, maxmem=256 * 1024 * 1024,
    )
    return "scrypt${}${}${}${}${}".format(
        params.log_n, params.r, params.p,
        base64.b64encode(salt).decode(), base64.b64encode(digest).decode(),
    )


def check_password(password: str, verifier: str) -> bool:
    """Constant-time comparison against a verifier produced by hash_password."""
    try:
        scheme, log_n, r, p, salt_b64, digest_b64 = verifier.split("$")
        if scheme != "scrypt":
            return False
        salt = base64.b64decode(salt_b64)
        expected = base64.b64decode(digest_b64)
        digest = hashlib.scrypt(
            password.encode("utf-8"), salt=salt, n=1 << int(log_n),
            r=int(r), p=int(p), maxmem=256 * 1024 * 1024,
        )
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(digest, expected)


@dataclass
class UserRecord:
    username: str
    credential_verifier: str
    sso_jwt_ouid: str
    sso_jwt_version: int = 0
    sso_jwt_count: int = 0
    totp_secret: Optional[str] = None
    enrollment_group_member: bool = False
    attributes: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sso_jwt_ouid:
            raise StoreError("ouid must be non-empty")
        if self.sso_jwt_version < 0 or self.sso_jwt_count < 0:
            raise StoreError("version and count must be non-negative")


@dataclass
class StoreSnapshot:
    records: List[UserRecord]
    schema_version: int = SCHEMA_VERSION


class QuotaResult(enum.Enum):
    CONSUMED = "consumed"
    EXHAUSTED = "exhausted"


# Fixed verifier used to equalize timing when the username is unknown.
_DUMMY_PASSWORD = "tulip-timing-equalizer"


class IdentityStore:
    """Thread-safe user store.

    Counters: `counters["accesses"]` counts every public data call;
    per-method counters sit alongside (e.g. `counters["read_version"]`).
    """

    def __init__(self, hash_params: ScryptParams = ScryptParams()):
        self._lock = threading.RLock()
        self._by_username: Dict[str, UserRecord] = {}
        self._by_ouid: Dict[str, UserRecord] = {}
        self.hash_params = hash_params
        self.counters = collections.Counter()
        self._dummy_verifier = hash_password(_DUMMY_PASSWORD, hash_params)

    def _count(self, name: str) -> None:
        self.counters[name] += 1
        self.counters["accesses"] += 1

    # -- provisioning ------------------------------------------------------

    def add(self, record: UserRecord) -> None:
        with self._lock:
            if record.username in self._by_username:
                raise DuplicateError(f"username {record.username!r} exists")
            if record.sso_jwt_ouid in self._by_ouid:
                raise DuplicateError("ouid collision")
            self._by_username[record.username] = record
            self._by_ouid[record.sso_jwt_ouid] = record

    # -- lookups -----------------------------------------------------------

    def find_by_username(self, username: str) -> Optional[UserRecord]:
        with self._lock:
            self._count("find_by_username")
            return self._by_username.get(username)

    def find_by_ouid(self, ouid: str) -> Optional[UserRecord]:
        with self._lock:
            self._count("find_by_ouid")
            return self._by_ouid.get(ouid)

    def read_version(self, ouid: str) -> Optional[int]:
        """Single back-end call: version for the record owning `ouid`."""
        with self._lock:
            self._count("read_version")
            record = self._by_ouid.get(ouid)
            return None if record is None else record.sso_jwt_version

    # -- authentication ----------------------------------------------------

    def verify_credentials(self, username: str, password: str) -> bool:
        """Unknown-username and wrong-password failures are indistinguishable:
        both run the full hash against some verifier."""
        with self._lock:
            self._count("verify_credentials")
            record = self._by_username.get(username)
            verifier = record.credential_verifier if record else self._dummy_verifier
        ok = check_password(password, verifier)
        return ok and record is not None

    # -- quota -------------------------------------------------------------

    def try_consume_enrollment(self, username: str) -> QuotaResult:
        """Atomic decrement-if-positive. Under N concurrent calls with count c,
        exactly min(N, c) observe CONSUMED."""
        with self._lock:
            self._count("try_consume_enrollment")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            if record.sso_jwt_count > 0:
                record.sso_jwt_count -= 1
                return QuotaResult.CONSUMED
            return QuotaResult.EXHAUSTED

    def restore_enrollment(self, username: str) -> None:
        """Compensate a consumed quota slot when minting failed afterwards."""
        with self._lock:
            self._count("restore_enrollment")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            record.sso_jwt_count += 1

    # -- mutations used by administration ----------------------------------

    def bump_version(self, username: str) -> tuple:
        with self._lock:
            self._count("bump_version")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            old = record.sso_jwt_version
            record.sso_jwt_version = old + 1
            return old, old + 1

    def global_bump(self) -> int:
        with self._lock:
            self._count("global_bump")
            for record in self._by_username.values():
                record.sso_jwt_version += 1
            return len(self._by_username)

    def set_count(self, username: str, value: int) -> tuple:
        if value < 0:
            raise ValueError("count must be non-negative")
        with self._lock:
            self._count("set_count")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            old = record.sso_jwt_count
            record.sso_jwt_count = value
            return old, value

    def increment_count(self, username: str) -> tuple:
        with self._lock:
            self._count("increment_count")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            old = record.sso_jwt_count
            record.sso_jwt_count = old + 1
            return old, old + 1

    def rotate_ouid(self, username: str, new_ouid: str) -> str:
        with self._lock:
            self._count("rotate_ouid")
            record = self._by_username.get(username)
            if record is None:
                raise UnknownUserError(username)
            if new_ouid in self._by_ouid:
                raise DuplicateError("ouid collision")
            del self._by_ouid[record.sso_jwt_ouid]
            record.sso_jwt_ouid = new_ouid
            self._by_ouid[new_ouid] = record
            return new_ouid

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            return StoreSnapshot(records=[replace(r) for r in self._by_username.values()])

    def persist(self, path: str) -> None:
        snap = self.snapshot()
        doc = {
            "schema_version": snap.schema_version,
            "records": [asdict(r) for r in snap.records],
        }
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str, hash_params: ScryptParams = ScryptParams()) -> "IdentityStore":
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise StoreFormatError(f"unreadable store file: {exc}") from None
        if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
            raise StoreFormatError(
                f"unsupported schema_version {doc.get('schema_version') if isinstance(doc, dict) else None!r}"
            )
        store = cls(hash_params=hash_params)
        try:
            for raw in doc["records"]:
                store.add(UserRecord(**raw))
        except (TypeError, KeyError, StoreError) as exc:
            raise StoreFormatError(f"bad record in store file: {exc}") from None
        return store
