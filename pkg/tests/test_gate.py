import random

import pytest

from tulip.gate import (
    GATE_TRANSITIONS,
    GateReason,
    GateState,
    LoginAttempt,
    gate,
    process_login,
)
from tulip.tokens import SigningKeyring, mint_token

from conftest import KEY2


def minted_for(user, keyring, now=1000, lifetime=1000):
    return mint_token(user, now, lifetime, keyring)


def test_no_token_rejects_with_zero_store_calls(store, keyring):
    before = store.counters["accesses"]
    decision = gate(None, store, keyring, now=1000)
    assert not decision.serve
    assert decision.reason is GateReason.NO_TOKEN
    assert decision.trace == [GateState.RECEIVED, GateState.REJECTED]
    assert store.counters["accesses"] == before


def test_valid_token_serves_with_one_store_call(store, keyring, alice):
    store.bump_version("alice")
    store.bump_version("alice")  # worked value: version 2
    token = minted_for(alice, keyring)
    before = store.counters["accesses"]
    decision = gate(token, store, keyring, now=1500)
    assert decision.serve
    assert decision.trace[-1] is GateState.SERVED
    assert store.counters["accesses"] == before + 1


def test_version_mismatch_rejects(store, keyring, alice):
    store.bump_version("alice")  # store at 1
    class Stale:
        sso_jwt_ouid = alice.sso_jwt_ouid
        sso_jwt_version = 0
    decision = gate(minted_for(Stale(), keyring), store, keyring, now=1500)
    assert not decision.serve
    assert decision.reason is GateReason.VERSION_MISMATCH


def test_tampered_token_rejects_with_zero_store_calls(store, keyring, alice):
    token = minted_for(alice, keyring)
    rng = random.Random(3)
    for _ in range(50):
        raw = bytearray(token.encode())
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(7)
        if raw.decode("latin-1") == token:
            continue
        before = store.counters["accesses"]
        decision = gate(raw.decode("latin-1"), store, keyring, now=1500)
        assert not decision.serve
        assert decision.reason in (GateReason.BAD_SIGNATURE, GateReason.EXPIRED)
        assert store.counters["accesses"] == before


def test_expired_token_rejects_without_store_call(store, keyring, alice):
    token = minted_for(alice, keyring, now=0, lifetime=100)
    before = store.counters["accesses"]
    decision = gate(token, store, keyring, now=101)
    assert decision.reason is GateReason.EXPIRED
    assert store.counters["accesses"] == before


def test_unknown_key_rejects_without_store_call(store, alice, keyring):
    other = SigningKeyring("k2", {"k2": KEY2})
    token = minted_for(alice, other)
    before = store.counters["accesses"]
    assert gate(token, store, keyring, now=1500).reason is GateReason.BAD_SIGNATURE
    assert store.counters["accesses"] == before


def test_unknown_ouid_rejects(store, keyring):
    class Ghost:
        sso_jwt_ouid = "not-in-store"
        sso_jwt_version = 0
    decision = gate(minted_for(Ghost(), keyring), store, keyring, now=1500)
    assert decision.reason is GateReason.UNKNOWN_OUID


# -- process_login ------------------------------------------------------------


def test_login_without_token_never_touches_credentials(store, keyring, alice):
    attempt = LoginAttempt("alice", "wonderland", presented_token=None)
    before = store.counters["verify_credentials"]
    outcome = process_login(attempt, store, keyring, now=1000)
    assert outcome.grant is None
    assert store.counters["verify_credentials"] == before


def test_login_with_revoked_token_never_touches_credentials(store, keyring, alice):
    token = minted_for(alice, keyring)
    store.bump_version("alice")
    before_creds = store.counters["verify_credentials"]
    before_reads = store.counters["read_version"]
    outcome = process_login(LoginAttempt("alice", "wonderland", token),
                            store, keyring, now=1500)
    assert outcome.grant is None
    assert store.counters["read_version"] == before_reads + 1
    assert store.counters["verify_credentials"] == before_creds


def test_login_happy_path(store, keyring, alice):
    token = minted_for(alice, keyring)
    outcome = process_login(LoginAttempt("alice", "wonderland", token),
                            store, keyring, now=1500)
    assert outcome.grant is not None
    assert outcome.grant.username == "alice"
    assert outcome.gate.serve


def test_login_wrong_credentials_with_valid_token(store, keyring, alice):
    token = minted_for(alice, keyring)
    outcome = process_login(LoginAttempt("alice", "bad", token),
                            store, keyring, now=1500)
    assert outcome.grant is None
    assert outcome.reason == "bad_credentials"


def test_gate_state_machine_paths():
    # Only the token-valid edge reaches SERVED.
    for edge, target in GATE_TRANSITIONS[GateState.RECEIVED].items():
        assert target in (GateState.TOKEN_CHECK, GateState.REJECTED)
    assert GATE_TRANSITIONS[GateState.TOKEN_CHECK]["token_valid"] is GateState.SERVED
    assert GATE_TRANSITIONS[GateState.TOKEN_CHECK]["token_invalid"] is GateState.REJECTED
    assert GATE_TRANSITIONS[GateState.RECEIVED]["token_absent"] is GateState.REJECTED
