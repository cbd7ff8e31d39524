"""Service configuration: strict JSON parsing into a ServiceConfig.

Unknown keys are errors, missing required keys are errors. `tulip-serve`
exits with code 2 on any configuration problem.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .enroll import ChallengeDefinition, ChallengePolicy
from .store import ScryptParams
from .tokens import CookiePolicy, SigningKeyring

ENV_VAR = "TULIP_CONFIG"


class ConfigError(Exception):
    pass


@dataclass
class ServiceConfig:
    listen: str                       # "host:port"
    store_path: str
    admin_secret: str
    keyring: SigningKeyring
    cookie: CookiePolicy = CookiePolicy()
    token_lifetime: int = 180 * 24 * 3600
    challenges: ChallengePolicy = ChallengePolicy()
    enroll_allowlist: List[str] = field(default_factory=lambda: ["127.0.0.0/8", "::1/128"])
    trusted_proxies: List[str] = field(default_factory=list)
    mode: str = "tulip"               # "tulip" or "baseline" (gate disabled)
    dev_insecure: bool = False
    asset_dir: Optional[str] = None
    event_log: Optional[str] = None
    audit_log: Optional[str] = None
    hash_params: ScryptParams = ScryptParams()

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])


_REQUIRED = {"listen", "store_path", "admin_secret", "keyring"}
_OPTIONAL = {
    "cookie", "token_lifetime", "challenges", "enroll_allowlist",
    "trusted_proxies", "mode", "dev_insecure", "asset_dir", "event_log",
    "audit_log", "password_hash",
}


def _check_keys(section: dict, allowed: set, context: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def parse_config(doc: dict) -> ServiceConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _check_keys(doc, _REQUIRED | _OPTIONAL, "config")
    missing = _REQUIRED - set(doc)
    if missing:
        raise ConfigError(f"missing required keys: {sorted(missing)}")

    kr = doc["keyring"]
    _check_keys(kr, {"active", "keys"}, "keyring")
    if "active" not in kr or "keys" not in kr:
        raise ConfigError("keyring requires 'active' and 'keys'")
    try:
        keys = {kid: bytes.fromhex(material) for kid, material in kr["keys"].items()}
        keyring = SigningKeyring(kr["active"], keys)
    except Exception as exc:
        raise ConfigError(f"bad keyring: {exc}") from None

    cookie = CookiePolicy()
    if "cookie" in doc:
        _check_keys(doc["cookie"], {"name", "same_site", "max_age"}, "cookie")
        try:
            cookie = CookiePolicy(**doc["cookie"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad cookie policy: {exc}") from None

    challenges = ChallengePolicy()
    if "challenges" in doc:
        defs = []
        for i, raw in enumerate(doc["challenges"]):
            _check_keys(raw, {"id", "kind", "params"}, f"challenges[{i}]")
            try:
                defs.append(ChallengeDefinition(raw["id"], raw["kind"], raw.get("params", {})))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad challenge [{i}]: {exc}") from None
        challenges = ChallengePolicy(tuple(defs))

    hash_params = ScryptParams()
    if "password_hash" in doc:
        _check_keys(doc["password_hash"], {"log_n", "r", "p"}, "password_hash")
        hash_params = ScryptParams(**doc["password_hash"])

    mode = doc.get("mode", "tulip")
    if mode not in ("tulip", "baseline"):
        raise ConfigError(f"mode must be 'tulip' or 'baseline', got {mode!r}")

    try:
        return ServiceConfig(
            listen=doc["listen"],
            store_path=doc["store_path"],
            admin_secret=doc["admin_secret"],
            keyring=keyring,
            cookie=cookie,
            token_lifetime=int(doc.get("token_lifetime", 180 * 24 * 3600)),
            challenges=challenges,
            enroll_allowlist=list(doc.get("enroll_allowlist", ["127.0.0.0/8", "::1/128"])),
            trusted_proxies=list(doc.get("trusted_proxies", [])),
            mode=mode,
            dev_insecure=bool(doc.get("dev_insecure", False)),
            asset_dir=doc.get("asset_dir"),
            event_log=doc.get("event_log"),
            audit_log=doc.get("audit_log"),
            hash_params=hash_params,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def load_config(path: Optional[str] = None) -> ServiceConfig:
    """Load from `path`, or from $TULIP_CONFIG when path is not given."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        raise ConfigError(f"no config path given and {ENV_VAR} is unset")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc)
