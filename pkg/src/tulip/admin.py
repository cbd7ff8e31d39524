"""Administrative operations: provisioning, revocation by version bump,
quota adjustment, and ouid rotation -- plus the `tulip-admin` CLI.

Every mutating command appends an audit entry. The CLI can either edit a
store file directly (service stopped) or call the running service's
/admin routes with a bearer secret.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import time
import urllib.request
import urllib.error
import uuid
from dataclasses import dataclass, field
from typing import List, Optional

from .store import IdentityStore, StoreError, UserRecord, hash_password


def fresh_ouid() -> str:
    """128 random bits in canonical UUID text form."""
    return str(uuid.UUID(bytes=secrets.token_bytes(16)))


@dataclass
class AuditEntry:
    timestamp: float
    command: str
    target: str
    old: object
    new: object


@dataclass
class AuditLog:
    """Append-only. With a path set, entries are also written as JSON lines."""

    path: Optional[str] = None
    entries: List[AuditEntry] = field(default_factory=list)

    def append(self, command: str, target: str, old, new, now: Optional[float] = None):
        entry = AuditEntry(now if now is not None else time.time(), command, target, old, new)
        self.entries.append(entry)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry.__dict__) + "\n")
        return entry


class AdminService:
    """Mutations routed through the store's atomic operations, with auditing."""

    def __init__(self, store: IdentityStore, audit: Optional[AuditLog] = None):
        self.store = store
        self.audit = audit if audit is not None else AuditLog()

    def add_user(
        self,
        username: str,
        password: str,
        initial_count: int = 3,
        totp_secret: Optional[str] = None,
        group_member: bool = False,
        attributes: Optional[dict] = None,
    ) -> UserRecord:
        record = UserRecord(
            username=username,
            credential_verifier=hash_password(password, self.store.hash_params),
            sso_jwt_ouid=fresh_ouid(),
            sso_jwt_version=0,
            sso_jwt_count=initial_count,
            totp_secret=totp_secret,
            enrollment_group_member=group_member,
            attributes=dict(attributes or {}),
        )
        self.store.add(record)
        self.audit.append("add_user", username, None, {"count": initial_count})
        return record

    def bump_version(self, username: str):
        old, new = self.store.bump_version(username)
        self.audit.append("bump_version", username, old, new)
        return old, new

    def global_bump(self) -> int:
        affected = self.store.global_bump()
        self.audit.append("global_bump", "ALL", None, {"affected": affected})
        return affected

    def set_count(self, username: str, value: int):
        old, new = self.store.set_count(username, value)
        self.audit.append("set_count", username, old, new)
        return old, new

    def increment_count(self, username: str):
        old, new = self.store.increment_count(username)
        self.audit.append("increment_count", username, old, new)
        return old, new

    def rotate_ouid(self, username: str) -> str:
        record = self.store.find_by_username(username)
        old = record.sso_jwt_ouid if record else None
        new = self.store.rotate_ouid(username, fresh_ouid())
        self.audit.append("rotate_ouid", username, old, new)
        return new

    def show_user(self, username: str) -> Optional[dict]:
        """Read-only view; never exposes verifier or TOTP secret contents."""
        record = self.store.find_by_username(username)
        if record is None:
            return None
        return {
            "username": record.username,
            "sso_jwt_ouid": record.sso_jwt_ouid,
            "sso_jwt_version": record.sso_jwt_version,
            "sso_jwt_count": record.sso_jwt_count,
            "totp_enabled": record.totp_secret is not None,
            "enrollment_group_member": record.enrollment_group_member,
            "attributes": dict(record.attributes),
        }


# ---------------------------------------------------------------------------
# CLI


def _http_admin_call(url: str, token: str, verb: str, params: dict) -> dict:
    req = urllib.request.Request(
        f"{url.rstrip('/')}/admin/{verb}",
        data=json.dumps(params).encode(),
        headers={"Authorization": f"Bearer {token}", "Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        raise SystemExit(f"admin call failed: HTTP {exc.code} {exc.read().decode(errors='replace')}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tulip-admin",
                                     description="Administer a TULIP identity store.")
    parser.add_argument("--store", help="path to a store file (offline mode)")
    parser.add_argument("--url", help="base URL of a running service")
    parser.add_argument("--admin-token", help="bearer secret for --url mode")
    parser.add_argument("--audit-log", help="append audit entries to this file (offline mode)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("add-user")
    p.add_argument("username")
    p.add_argument("password")
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--totp-secret")
    p.add_argument("--group-member", action="store_true")
    p.add_argument("--attribute", action="append", default=[], metavar="NAME=VALUE")

    for verb in ("bump-version", "increment-count", "rotate-ouid", "show-user"):
        p = sub.add_parser(verb)
        p.add_argument("username")

    p = sub.add_parser("set-count")
    p.add_argument("username")
    p.add_argument("value", type=int)

    sub.add_parser("global-bump")

    args = parser.parse_args(argv)
    if bool(args.store) == bool(args.url):
        parser.error("exactly one of --store or --url is required")
    if args.url and not args.admin_token:
        parser.error("--url mode requires --admin-token")

    params = {}
    if args.verb == "add-user":
        attributes = {}
        for pair in args.attribute:
            name, _, value = pair.partition("=")
            attributes[name] = value
        params = {
            "username": args.username,
            "password": args.password,
            "initial_count": args.count,
            "totp_secret": args.totp_secret,
            "group_member": args.group_member,
            "attributes": attributes,
        }
    elif args.verb == "set-count":
        params = {"username": args.username, "value": args.value}
    elif args.verb != "global-bump":
        params = {"username": args.username}

    if args.url:
        result = _http_admin_call(args.url, args.admin_token, args.verb, params)
        print(json.dumps(result, indent=1))
        return 0

    store = IdentityStore.load(args.store)
    admin = AdminService(store, AuditLog(path=args.audit_log))
    try:
        if args.verb == "add-user":
            record = admin.add_user(
                params["username"], params["password"], params["initial_count"],
                params["totp_secret"], params["group_member"], params["attributes"],
            )
            print(f"added {record.username} ouid={record.sso_jwt_ouid} "
                  f"version=0 count={record.sso_jwt_count}")
        elif args.verb == "bump-version":
            old, new = admin.bump_version(args.username)
            print(f"version {old} -> {new}")
        elif args.verb == "global-bump":
            print(f"affected {admin.global_bump()} users")
        elif args.verb == "set-count":
            old, new = admin.set_count(args.username, args.value)
            print(f"count {old} -> {new}")
        elif args.verb == "increment-count":
            old, new = admin.increment_count(args.username)
            print(f"count {old} -> {new}")
        elif args.verb == "rotate-ouid":
            print(f"new ouid {admin.rotate_ouid(args.username)}")
        elif args.verb == "show-user":
            view = admin.show_user(args.username)
            if view is None:
                print("no such user", file=sys.stderr)
                return 1
            print(json.dumps(view, indent=1))
            return 0
    except (ValueError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.verb != "show-user":
        store.persist(args.store)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
