"""Threat harness: drive a live service with honest users and
credential-holding attackers, and report breach counts for the gated mode
versus a gate-disabled baseline.

The baseline breach probability has an analytic form the harness computes
itself: an attacker making a credential-valid attempts each of which the
careless victim approves with probability p breaches at least once with
probability 1 - (1-p)^(n*a). The empirical frequency over seeds is compared
against that.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import http.client
import json
import random
import secrets
import socket
import sys
import urllib.parse
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

from . import service as service_mod
from . import tokens
from .enroll import ChallengePolicy
from .store import IdentityStore, ScryptParams


class HarnessError(Exception):
    pass


@dataclass
class ScenarioConfig:
    k: int                              # total users
    n: int                              # users with leaked credentials
    attacker_attempts_per_user: int
    seed: int
    mode: str = "tulip"                 # "tulip" or "baseline"
    mfa_accept_probability: float = 0.0

    def __post_init__(self):
        if not (0 <= self.n <= self.k):
            raise ValueError("need 0 <= n <= k")
        if not (0.0 <= self.mfa_accept_probability <= 1.0):
            raise ValueError("probability out of range")
        if self.mode not in ("tulip", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.k and self.n / self.k > 0.5:
            print("warning: n/k > 0.5; the compromised population is supposed "
                  "to be a small fraction", file=sys.stderr)


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    breaches: int
    mfa_prompts_triggered: int
    gate_rejections: Dict[str, int]
    credential_checks: int              # back-end verifications during the run
    honest_logins: int
    honest_enrollments: int
    analytic_breach_probability: Optional[float]
    per_user: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["config"] = asdict(self.config)
        return doc


class HttpClient:
    """One simulated browser: persistent connection plus a one-slot cookie jar."""

    def __init__(self, base_url: str, cookie_name: str = "tulip_token"):
        parsed = urllib.parse.urlsplit(base_url)
        self._host = parsed.hostname
        self._port = parsed.port or 80
        self._conn = http.client.HTTPConnection(self._host, self._port, timeout=30)
        self.cookie_name = cookie_name
        self.cookie: Optional[str] = None

    def request(self, method: str, path: str, form: Optional[dict] = None,
                headers: Optional[dict] = None, json_body: Optional[dict] = None,
                ) -> Tuple[int, dict, bytes]:
        hdrs = dict(headers or {})
        body = None
        if form is not None:
            body = urllib.parse.urlencode(form)
            hdrs["Content-Type"] = "application/x-www-form-urlencoded"
        elif json_body is not None:
            body = json.dumps(json_body)
            hdrs["Content-Type"] = "application/json"
        if self.cookie:
            hdrs["Cookie"] = f"{self.cookie_name}={self.cookie}"
        for attempt in range(2):
            try:
                self._conn.request(method, path, body=body, headers=hdrs)
                if self._conn.sock is not None:
                    self._conn.sock.setsockopt(socket.IPPROTO_TCP,
                                               socket.TCP_NODELAY, 1)
                resp = self._conn.getresponse()
                data = resp.read()
                break
            except (http.client.HTTPException, ConnectionError, OSError):
                self._conn.close()
                if attempt:
                    raise
        set_cookie = resp.getheader("Set-Cookie")
        if set_cookie and set_cookie.startswith(f"{self.cookie_name}="):
            self.cookie = set_cookie.split(";")[0].split("=", 1)[1]
        return resp.status, dict(resp.getheaders()), data

    def clear_cookies(self):
        self.cookie = None

    def close(self):
        self._conn.close()


def admin_call(base_url: str, admin_token: str, verb: str, params: dict) -> dict:
    client = HttpClient(base_url)
    try:
        status, _, body = client.request(
            "POST", f"/admin/{verb}", json_body=params,
            headers={"Authorization": f"Bearer {admin_token}"})
    finally:
        client.close()
    if status != 200:
        raise HarnessError(f"admin {verb} failed: HTTP {status} {body[:200]!r}")
    return json.loads(body)


@dataclass
class Population:
    users: List[Tuple[str, str]]        # (username, password)
    compromised: List[Tuple[str, str]]  # subset known to the attacker


def provision_population(base_url: str, admin_token: str, k: int, n: int,
                         initial_count: int = 3, prefix: str = "user") -> Population:
    users = []
    for i in range(k):
        username, password = f"{prefix}{i}", f"pw-{i}"
        admin_call(base_url, admin_token, "add-user", {
            "username": username, "password": password,
            "initial_count": initial_count,
        })
        users.append((username, password))
    return Population(users=users, compromised=users[:n])


def _stats(base_url: str, admin_token: str) -> dict:
    return admin_call(base_url, admin_token, "stats", {})


def _counter_delta(before: dict, after: dict, prefix: str) -> Dict[str, int]:
    out = {}
    for key, value in after.items():
        if key.startswith(prefix):
            delta = value - before.get(key, 0)
            if delta:
                out[key[len(prefix):]] = delta
    return out


def run_scenario(config: ScenarioConfig, base_url: str, admin_token: str,
                 population: Optional[Population] = None,
                 workers: int = 16, prefix: str = "user") -> ScenarioReport:
    """Run one scenario against a live service in the matching mode.

    Deterministic per config: all coin flips derive from the seed, and the
    report holds only aggregate counts.
    """
    health = json.loads(HttpClient(base_url).request("GET", "/healthz")[2])
    if health.get("mode") != config.mode:
        raise HarnessError(
            f"service runs mode {health.get('mode')!r}, scenario wants {config.mode!r}")

    if population is None:
        population = provision_population(base_url, admin_token, config.k, config.n,
                                          prefix=prefix)
    else:
        # Refresh quota so honest users can enroll this round.
        for username, _ in population.users:
            admin_call(base_url, admin_token, "set-count",
                       {"username": username, "value": 1})

    before = _stats(base_url, admin_token)
    per_user: Dict[str, str] = {}
    honest_enrollments = 0
    honest_logins = 0

    def honest_flow(user):
        username, password = user
        client = HttpClient(base_url)
        try:
            enrolled = logged_in = False
            status, _, _ = client.request("POST", "/enroll",
                                          form={"username": username, "password": password})
            enrolled = status == 200 and client.cookie is not None
            if enrolled:
                status, _, body = client.request(
                    "POST", "/login", form={"username": username, "password": password})
                logged_in = status == 200 and b"session" in body
            return username, enrolled, logged_in
        finally:
            client.close()

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        for username, enrolled, logged_in in pool.map(honest_flow, population.users):
            honest_enrollments += enrolled
            honest_logins += logged_in
            per_user[username] = "ok" if logged_in else "honest_flow_failed"

    breaches = 0

    def attack(user):
        username, password = user
        # Per-attacker stream keyed off the scenario seed: order-independent.
        rng = random.Random(f"{config.seed}:{username}")
        client = HttpClient(base_url)
        wins = 0
        try:
            for _ in range(config.attacker_attempts_per_user):
                form = {"username": username, "password": password}
                if config.mode == "baseline":
                    approve = rng.random() < config.mfa_accept_probability
                    form["mfa_response"] = "approve" if approve else "deny"
                status, _, body = client.request("POST", "/login", form=form)
                if status == 200 and b"session" in body:
                    wins += 1
            return username, wins
        finally:
            client.close()

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        for username, wins in pool.map(attack, population.compromised):
            breaches += wins
            if wins:
                per_user[username] = "breached"

    after = _stats(base_url, admin_token)
    rejections = _counter_delta(before["service"], after["service"], "gate_rejections:")
    mfa = after["service"].get("mfa_prompts", 0) - before["service"].get("mfa_prompts", 0)
    creds = (after["store"].get("verify_credentials", 0)
             - before["store"].get("verify_credentials", 0))

    analytic = None
    if config.mode == "baseline":
        trials = config.n * config.attacker_attempts_per_user
        analytic = 1.0 - (1.0 - config.mfa_accept_probability) ** trials

    return ScenarioReport(
        config=config,
        breaches=breaches,
        mfa_prompts_triggered=mfa,
        gate_rejections=rejections,
        credential_checks=creds,
        honest_logins=honest_logins,
        honest_enrollments=honest_enrollments,
        analytic_breach_probability=analytic,
        per_user=per_user,
    )


# ---------------------------------------------------------------------------
# Attacker playbook


def run_attacker_playbook(base_url: str, admin_token: str,
                          username: str = "victim",
                          password: str = "victim-pass") -> Dict[str, dict]:
    """Execute the attack variants against a gated service and record which
    succeed. Only the stolen-valid-cookie variant is expected to reach the
    login form.
    """
    admin_call(base_url, admin_token, "add-user", {
        "username": username, "password": password, "initial_count": 5,
    })

    # Fixture material: a revoked cookie and a fresh valid cookie.
    device = HttpClient(base_url)
    status, _, _ = device.request("POST", "/enroll",
                                  form={"username": username, "password": password})
    if status != 200 or not device.cookie:
        raise HarnessError("victim enrollment failed; cannot build playbook fixtures")
    revoked_cookie = device.cookie
    admin_call(base_url, admin_token, "bump-version", {"username": username})
    device.clear_cookies()
    device.request("POST", "/enroll", form={"username": username, "password": password})
    valid_cookie = device.cookie
    device.close()

    forged_keyring = tokens.SigningKeyring("guess", {"guess": secrets.token_bytes(32)})

    class _FakeUser:
        sso_jwt_ouid = "00000000-0000-0000-0000-000000000001"
        sso_jwt_version = 0

    forged = tokens.mint_token(_FakeUser(), 0, 10 ** 10, forged_keyring)

    def observe(variant: str, method: str, cookie: Optional[str],
                form: Optional[dict]) -> dict:
        before = _stats(base_url, admin_token)
        client = HttpClient(base_url)
        client.cookie = cookie
        try:
            status, _, body = client.request(method, "/login", form=form)
        finally:
            client.close()
        after = _stats(base_url, admin_token)
        return {
            "variant": variant,
            "status": status,
            "login_form_served": b"login-form" in body,
            "session_granted": status == 200 and b"session" in body,
            "credential_checks": (after["store"].get("verify_credentials", 0)
                                  - before["store"].get("verify_credentials", 0)),
        }

    creds = {"username": username, "password": password}
    return {
        "get_without_token": observe("get_without_token", "GET", None, None),
        "post_form_directly": observe("post_form_directly", "POST", None, creds),
        "replay_revoked_token": observe("replay_revoked_token", "GET", revoked_cookie, None),
        "forged_token": observe("forged_token", "GET", forged, None),
        "stolen_valid_cookie": observe("stolen_valid_cookie", "GET", valid_cookie, None),
    }


# ---------------------------------------------------------------------------
# Embedded service + CLI


def start_embedded_service(mode: str = "tulip",
                           challenges: ChallengePolicy = ChallengePolicy(),
                           hash_params: ScryptParams = ScryptParams(log_n=4, r=8, p=1),
                           ) -> Tuple[object, str, str]:
    """Spin up a loopback service for simulation. Returns (server, url, admin_token)."""
    admin_token = secrets.token_hex(16)
    keyring = tokens.SigningKeyring("sim", {"sim": secrets.token_bytes(32)})
    store = IdentityStore(hash_params)
    svc = service_mod.TulipService(
        store, keyring, admin_token,
        challenges=challenges, mode=mode, dev_insecure=True,
    )
    server, url = service_mod.start_in_thread(svc)
    return server, url, admin_token


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tulip-sim",
                                     description="TULIP threat simulation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a population scenario")
    p.add_argument("--config", required=True, help="scenario config JSON file")
    p.add_argument("--target", help="existing service URL (default: embedded)")
    p.add_argument("--admin-token", help="admin secret for --target")
    p.add_argument("--output", help="also write the report to this file")

    p = sub.add_parser("playbook", help="run the attacker playbook")
    p.add_argument("--target", help="existing gated service URL (default: embedded)")
    p.add_argument("--admin-token", help="admin secret for --target")

    args = parser.parse_args(argv)

    if args.command == "run":
        with open(args.config, encoding="utf-8") as f:
            doc = json.load(f)
        config = ScenarioConfig(**doc)
        server = None
        if args.target:
            if not args.admin_token:
                parser.error("--target requires --admin-token")
            base_url, admin_token = args.target, args.admin_token
        else:
            server, base_url, admin_token = start_embedded_service(mode=config.mode)
        try:
            report = run_scenario(config, base_url, admin_token)
        finally:
            if server:
                server.shutdown()
        text = json.dumps(report.to_dict(), indent=1)
        print(text)
        if args.output:
            with open(args.output, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        if config.mode == "tulip" and (report.breaches or report.mfa_prompts_triggered):
            print("TULIP-mode invariant violated: breaches or MFA prompts occurred",
                  file=sys.stderr)
            return 1
        return 0

    if args.command == "playbook":
        server = None
        if args.target:
            if not args.admin_token:
                parser.error("--target requires --admin-token")
            base_url, admin_token = args.target, args.admin_token
        else:
            server, base_url, admin_token = start_embedded_service(mode="tulip")
        try:
            outcomes = run_attacker_playbook(base_url, admin_token)
        finally:
            if server:
                server.shutdown()
        print(json.dumps(outcomes, indent=1))
        return 0

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
