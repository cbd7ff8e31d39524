"""Time-based one-time codes (RFC 6238 style) for the enrollment MFA challenge."""

from __future__ import annotations

import base64
import hashlib
import hmac
import struct


def generate_code(secret_b32: str, at_time: int, digits: int = 6, period: int = 30) -> str:
    """Code for the time step containing `at_time`. Secret is base32 text."""
    normalized = secret_b32.strip().replace(" ", "").upper()
    normalized += "=" * ((-len(normalized)) % 8)
    key = base64.b32decode(normalized)
    counter = int(at_time) // period
    digest = hmac.new(key, struct.pack(">Q", counter), hashlib.sha1).digest()
    offset = digest[-1] & 0x0F
    value = struct.unpack(">I", digest[offset:offset + 4])[0] & 0x7FFFFFFF
    return str(value % (10 ** digits)).zfill(digits)


def verify_code(secret_b32: str, code: str, at_time: int,
                window: int = 1, digits: int = 6, period: int = 30) -> bool:
    """Accept the code for the current step or +/- `window` adjacent steps."""
    if not code or not code.isdigit() or len(code) != digits:
        return False
    try:
        ok = False
        for step in range(-window, window + 1):
            expected = generate_code(secret_b32, int(at_time) + step * period, digits, period)
            # Check every window to keep the work constant.
            ok = hmac.compare_digest(expected, code) or ok
        return ok
    except (ValueError, TypeError):
        return False
