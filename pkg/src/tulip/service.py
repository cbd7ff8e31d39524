"""HTTP binding: enrollment and login routes, cookie handling, network
allowlisting, admin routes, static assets, and per-request event logging.

Built on the stdlib threading HTTP server; TLS termination is assumed to
happen in a reverse proxy. Rejections are deliberately uniform: every gate
failure returns the same bytes, and a non-allowlisted client sees the same
404 it would get for a route that does not exist.
"""

from __future__ import annotations

import argparse
import collections
import hmac
import ipaddress
import json
import mimetypes
import os
import sys
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from html import escape
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, List, Optional, Tuple

from . import tokens
from .gate import SessionGrant, gate as run_gate
from .admin import AdminService, AuditLog
from .config import ConfigError, ServiceConfig, load_config
from .enroll import ChallengePolicy, EnrollmentRequest, enroll
from .store import IdentityStore, StoreError, UnknownUserError

REJECT_BODY = b"Unauthorized\n"
NOT_FOUND_BODY = b"Not Found\n"
ENROLL_FAIL_BODY = b"Enrollment declined\n"

_NO_STORE = ("Cache-Control", "no-store")


@dataclass
class Request:
    method: str
    path: str
    headers: object            # mapping-like with .get
    body: bytes
    peer: str                  # socket peer address

    @property
    def route(self) -> str:
        return urllib.parse.urlsplit(self.path).path

    def form(self) -> Dict[str, str]:
        try:
            parsed = urllib.parse.parse_qs(self.body.decode("utf-8"), keep_blank_values=True)
        except UnicodeDecodeError:
            return {}
        return {k: v[0] for k, v in parsed.items()}


@dataclass
class Response:
    status: int
    headers: List[Tuple[str, str]] = field(default_factory=list)
    body: bytes = b""


def _json_response(status: int, payload: dict) -> Response:
    body = json.dumps(payload).encode()
    return Response(status, [("Content-Type", "application/json")], body)


def _html_response(status: int, html: str, extra=()) -> Response:
    return Response(status, [("Content-Type", "text/html; charset=utf-8"), *extra],
                    html.encode())


class TulipService:
    """Route handlers over the core modules. One instance per server."""

    def __init__(
        self,
        store: IdentityStore,
        keyring: tokens.SigningKeyring,
        admin_secret: str,
        *,
        cookie: tokens.CookiePolicy = tokens.CookiePolicy(),
        challenges: ChallengePolicy = ChallengePolicy(),
        token_lifetime: int = 180 * 24 * 3600,
        enroll_allowlist=("127.0.0.0/8", "::1/128"),
        trusted_proxies=(),
        mode: str = "tulip",
        dev_insecure: bool = False,
        asset_dir: Optional[str] = None,
        event_log: Optional[str] = None,
        audit_log: Optional[AuditLog] = None,
        clock=time.time,
    ):
        self.store = store
        self.keyring = keyring
        self.admin_secret = admin_secret
        self.cookie = cookie
        self.challenges = challenges
        self.token_lifetime = token_lifetime
        self.enroll_allowlist = [ipaddress.ip_network(c) for c in enroll_allowlist]
        self.trusted_proxies = set(trusted_proxies)
        self.mode = mode
        self.dev_insecure = dev_insecure
        self.asset_dir = asset_dir
        self.event_log = event_log
        self.clock = clock
        self.admin = AdminService(store, audit_log)
        self.counters = collections.Counter()
        self.events = collections.deque(maxlen=10000)
        self._event_lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: ServiceConfig, store: IdentityStore) -> "TulipService":
        return cls(
            store, cfg.keyring, cfg.admin_secret,
            cookie=cfg.cookie, challenges=cfg.challenges,
            token_lifetime=cfg.token_lifetime,
            enroll_allowlist=cfg.enroll_allowlist,
            trusted_proxies=cfg.trusted_proxies, mode=cfg.mode,
            dev_insecure=cfg.dev_insecure, asset_dir=cfg.asset_dir,
            event_log=cfg.event_log,
            audit_log=AuditLog(path=cfg.audit_log),
        )

    # -- infrastructure ------------------------------------------------------

    def client_address(self, req: Request) -> str:
        """Socket peer, unless the peer is a trusted proxy forwarding for
        someone else."""
        if req.peer in self.trusted_proxies:
            forwarded = req.headers.get("X-Forwarded-For")
            if forwarded:
                return forwarded.split(",")[0].strip()
        return req.peer

    def _allowlisted(self, addr: str) -> bool:
        try:
            ip = ipaddress.ip_address(addr)
        except ValueError:
            return False
        return any(ip in net for net in self.enroll_allowlist)

    def _log_event(self, route: str, verdict: str, reason: Optional[str], ouid: Optional[str]):
        record = {
            "timestamp": self.clock(),
            "route": route,
            "verdict": verdict,
            "reason": reason,
            "ouid": ouid,
        }
        with self._event_lock:
            self.events.append(record)
            if self.event_log:
                with open(self.event_log, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record) + "\n")

    def _not_found(self) -> Response:
        return Response(404, [("Content-Type", "text/plain")], NOT_FOUND_BODY)

    def _reject(self) -> Response:
        # Identical bytes for every rejection class.
        return Response(401, [("Content-Type", "text/plain"), _NO_STORE], REJECT_BODY)

    def _cookie_allowed(self, req: Request) -> bool:
        # Secure cookies over a plaintext socket only make sense when a TLS
        # proxy sits in front, or explicitly in dev mode.
        return self.dev_insecure or req.peer in self.trusted_proxies

    # -- dispatch --------------------------------------------------------------

    def handle(self, req: Request) -> Response:
        route = req.route
        try:
            if route == "/healthz" and req.method == "GET":
                return _json_response(200, {"status": "ok", "mode": self.mode})
            if route == "/enroll/descriptor" and req.method == "GET":
                return self._handle_descriptor(req)
            if route == "/enroll":
                return self._handle_enroll(req)
            if route == "/login":
                return self._handle_login(req)
            if route.startswith("/admin/") and req.method == "POST":
                return self._handle_admin(req, route[len("/admin/"):])
            if route.startswith("/assets/") and req.method == "GET":
                return self._handle_asset(route[len("/assets/"):])
            return self._not_found()
        except Exception:
            # Fail closed; never leak internals.
            self._log_event(route, "error", "internal_error", None)
            return Response(500, [("Content-Type", "text/plain")], b"Internal Error\n")

    # -- enrollment -----------------------------------------------------------

    def _handle_descriptor(self, req: Request) -> Response:
        if not self._allowlisted(self.client_address(req)):
            self._log_event("/enroll/descriptor", "not_found", "off_network", None)
            return self._not_found()
        return _json_response(200, {"challenges": self.challenges.descriptor()})

    def _handle_enroll(self, req: Request) -> Response:
        if not self._allowlisted(self.client_address(req)):
            self._log_event("/enroll", "not_found", "off_network", None)
            return self._not_found()
        self.counters["enroll_handler"] += 1
        if req.method == "GET":
            return _html_response(200, self._enroll_page(), [_NO_STORE])
        if req.method != "POST":
            return self._not_found()
        form = req.form()
        if "username" not in form or "password" not in form:
            self._log_event("/enroll", "bad_request", "malformed_form", None)
            return Response(400, [("Content-Type", "text/plain")], b"Bad Request\n")
        responses = {
            ch.id: form[ch.id] for ch in self.challenges.challenges if ch.id in form
        }
        request = EnrollmentRequest(
            username=form["username"],
            password=form["password"],
            presented_token=tokens.decode_cookie(req.headers, self.cookie),
            challenge_responses=responses,
            client_network_address=self.client_address(req),
        )
        outcome = enroll(request, self.store, self.keyring, self.challenges,
                         int(self.clock()), self.token_lifetime)
        if outcome.accepted and outcome.reused:
            self._log_event("/enroll", "accepted_reused", None, None)
            return _html_response(200, self._enroll_done_page(reused=True), [_NO_STORE])
        if outcome.accepted:
            if not self._cookie_allowed(req):
                self._log_event("/enroll", "error", "secure_cookie_over_plaintext", None)
                return Response(500, [("Content-Type", "text/plain")],
                                b"Server misconfigured\n")
            header = tokens.encode_cookie(outcome.token, self.cookie)
            self._log_event("/enroll", "accepted", None, None)
            return _html_response(200, self._enroll_done_page(reused=False),
                                  [("Set-Cookie", header), _NO_STORE])
        self.counters[f"enroll_declined:{outcome.reason}"] += 1
        self._log_event("/enroll", "declined", outcome.reason, None)
        return Response(401, [("Content-Type", "text/plain"), _NO_STORE], ENROLL_FAIL_BODY)

    # -- login ------------------------------------------------------------------

    def _handle_login(self, req: Request) -> Response:
        if req.method == "GET":
            return self._login_get(req)
        if req.method == "POST":
            return self._login_post(req)
        return self._not_found()

    def _login_get(self, req: Request) -> Response:
        self.counters["login_get"] += 1
        if self.mode == "baseline":
            self._log_event("/login", "serve", "baseline", None)
            return _html_response(200, self._login_page(), [_NO_STORE])
        token = tokens.decode_cookie(req.headers, self.cookie)
        decision = run_gate(token, self.store, self.keyring, int(self.clock()))
        if decision.serve:
            self._log_event("/login", "serve", None, decision.ouid)
            return _html_response(200, self._login_page(), [_NO_STORE])
        self.counters[f"gate_rejections:{decision.reason.value}"] += 1
        self._log_event("/login", "reject", decision.reason.value, decision.ouid)
        return self._reject()

    def _login_post(self, req: Request) -> Response:
        self.counters["login_post"] += 1
        if self.mode == "baseline":
            return self._baseline_login(req)
        token = tokens.decode_cookie(req.headers, self.cookie)
        decision = run_gate(token, self.store, self.keyring, int(self.clock()))
        if not decision.serve:
            # Form data is never parsed on a rejected request.
            self.counters[f"gate_rejections:{decision.reason.value}"] += 1
            self._log_event("/login", "reject", decision.reason.value, decision.ouid)
            return self._reject()
        form = req.form()
        username = form.get("username", "")
        if not self.store.verify_credentials(username, form.get("password", "")):
            self._log_event("/login", "reject", "bad_credentials", decision.ouid)
            return self._reject()
        grant = SessionGrant(session_id=os.urandom(16).hex(), username=username)
        self.counters["session_grants"] += 1
        self._log_event("/login", "grant", None, decision.ouid)
        return _json_response(200, {"session": grant.session_id, "username": grant.username})

    def _baseline_login(self, req: Request) -> Response:
        """Gate disabled: the conventional public SSO flow, with a stub MFA
        prompt emitted for every credential-valid attempt."""
        form = req.form()
        username = form.get("username", "")
        if not self.store.verify_credentials(username, form.get("password", "")):
            self._log_event("/login", "reject", "bad_credentials", None)
            return self._reject()
        self.counters["mfa_prompts"] += 1
        self._log_event("/login", "mfa_prompt", None, None)
        if form.get("mfa_response") == "approve":
            self.counters["session_grants"] += 1
            self._log_event("/login", "grant", "mfa_approved", None)
            return _json_response(200, {"session": os.urandom(16).hex(),
                                        "username": username})
        self._log_event("/login", "reject", "mfa_not_approved", None)
        return self._reject()

    # -- admin -------------------------------------------------------------------

    def _handle_admin(self, req: Request, verb: str) -> Response:
        if not self._allowlisted(self.client_address(req)):
            self._log_event(f"/admin/{verb}", "not_found", "off_network", None)
            return self._not_found()
        auth = req.headers.get("Authorization") or ""
        presented = auth[len("Bearer "):] if auth.startswith("Bearer ") else ""
        if not hmac.compare_digest(presented.encode(), self.admin_secret.encode()):
            self._log_event(f"/admin/{verb}", "forbidden", "bad_admin_secret", None)
            return Response(403, [("Content-Type", "text/plain")], b"Forbidden\n")
        self.counters["admin_handler"] += 1
        try:
            params = json.loads(req.body.decode() or "{}")
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _json_response(400, {"error": "bad JSON"})
        try:
            result = self._admin_verb(verb, params)
        except (UnknownUserError, StoreError, ValueError, KeyError, TypeError) as exc:
            return _json_response(400, {"error": str(exc)})
        if result is None:
            return self._not_found()
        self._log_event(f"/admin/{verb}", "ok", None, None)
        return _json_response(200, result)

    def _admin_verb(self, verb: str, params: dict) -> Optional[dict]:
        if verb == "add-user":
            record = self.admin.add_user(
                params["username"], params["password"],
                int(params.get("initial_count", 3)),
                params.get("totp_secret"),
                bool(params.get("group_member", False)),
                params.get("attributes") or {},
            )
            return {"username": record.username, "ouid": record.sso_jwt_ouid,
                    "version": record.sso_jwt_version, "count": record.sso_jwt_count}
        if verb == "bump-version":
            old, new = self.admin.bump_version(params["username"])
            return {"old": old, "new": new}
        if verb == "global-bump":
            return {"affected": self.admin.global_bump()}
        if verb == "set-count":
            old, new = self.admin.set_count(params["username"], int(params["value"]))
            return {"old": old, "new": new}
        if verb == "increment-count":
            old, new = self.admin.increment_count(params["username"])
            return {"old": old, "new": new}
        if verb == "rotate-ouid":
            return {"ouid": self.admin.rotate_ouid(params["username"])}
        if verb == "show-user":
            view = self.admin.show_user(params["username"])
            return view if view is not None else {"found": False}
        if verb == "stats":
            return {"service": dict(self.counters), "store": dict(self.store.counters)}
        return None

    # -- assets and pages ----------------------------------------------------------

    def _handle_asset(self, name: str) -> Response:
        if not self.asset_dir or "/" in name or name.startswith("."):
            return self._not_found()
        path = os.path.join(self.asset_dir, name)
        if not os.path.isfile(path):
            return self._not_found()
        ctype = mimetypes.guess_type(name)[0] or "application/octet-stream"
        with open(path, "rb") as f:
            return Response(200, [("Content-Type", ctype)], f.read())

    def _script_tag(self) -> str:
        if not self.asset_dir:
            return ""
        return '<script type="module" src="/assets/app.js" defer></script>'

    def _enroll_page(self) -> str:
        inputs = []
        for entry in self.challenges.descriptor():
            if entry["input"]:
                inputs.append(
                    f'<label>{escape(entry["label"])} '
                    f'<input name="{escape(entry["id"])}" autocomplete="off"></label>'
                )
        return (
            "<!doctype html><html><head><title>Device Enrollment</title>"
            f"{self._script_tag()}</head><body data-view=\"enroll_form\">"
            "<h1>Enroll this device</h1>"
            '<form id="enroll-form" method="post" action="/enroll">'
            '<label>Username <input name="username" autocomplete="username"></label>'
            '<label>Password <input name="password" type="password"></label>'
            + "".join(inputs)
            + '<button type="submit">Enroll</button></form></body></html>'
        )

    def _enroll_done_page(self, reused: bool) -> str:
        view = "enroll_reused" if reused else "enroll_success"
        message = (
            "This device is already enrolled." if reused
            else "Device enrolled. You can now sign in."
        )
        return (
            "<!doctype html><html><head><title>Enrollment</title>"
            f"{self._script_tag()}</head><body data-view=\"{view}\">"
            f"<h1>Enrollment</h1><p>{message}</p>"
            '<p><a href="/login">Continue to sign-in</a></p></body></html>'
        )

    def _login_page(self) -> str:
        return (
            "<!doctype html><html><head><title>Sign in</title>"
            f"{self._script_tag()}</head><body data-view=\"login_form\">"
            "<h1>Sign in</h1>"
            '<form id="login-form" method="post" action="/login">'
            '<label>Username <input name="username" autocomplete="username"></label>'
            '<label>Password <input name="password" type="password"></label>'
            '<button type="submit">Sign in</button></form></body></html>'
        )


# ---------------------------------------------------------------------------
# stdlib HTTP plumbing


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "tulip"
    sys_version = ""
    disable_nagle_algorithm = True  # small responses; avoid delayed-ACK stalls

    def log_message(self, *args):  # request logging goes through the event log
        pass

    def _dispatch(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length > 0 else b""
        req = Request(self.command, self.path, self.headers, body,
                      self.client_address[0])
        resp = self.server.service.handle(req)
        self.send_response(resp.status)
        for name, value in resp.headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(resp.body)))
        self.end_headers()
        self.wfile.write(resp.body)

    do_GET = _dispatch
    do_POST = _dispatch


class ServiceServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128

    def __init__(self, address, service: TulipService):
        super().__init__(address, _Handler)
        self.service = service


def start_in_thread(service: TulipService, host: str = "127.0.0.1", port: int = 0):
    """Run the service on a background thread; returns (server, base_url)."""
    server = ServiceServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{server.server_address[0]}:{server.server_address[1]}"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tulip-serve",
                                     description="Run the TULIP SSO front door.")
    parser.add_argument("--config", help=f"config file path (or ${'{'}TULIP_CONFIG{'}'})")
    parser.add_argument("--dev-insecure", action="store_true",
                        help="allow Secure cookies over plaintext (development only)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.dev_insecure:
        cfg.dev_insecure = True
    if os.path.exists(cfg.store_path):
        store = IdentityStore.load(cfg.store_path, cfg.hash_params)
    else:
        store = IdentityStore(cfg.hash_params)
    service = TulipService.from_config(cfg, store)
    server = ServiceServer((cfg.host, cfg.port), service)
    print(f"listening on {cfg.host}:{cfg.port} mode={cfg.mode}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        store.persist(cfg.store_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
