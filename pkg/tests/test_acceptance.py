"""Acceptance suite: one test per release criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible with ``-s`` or
in captured output on failure) and enforces the criterion at its stated
tolerance, including runtime budgets where the criterion sets one.
"""

import concurrent.futures
import itertools
import random
import time

from tulip import tokens
from tulip.admin import AdminService
from tulip.enroll import (
    ChallengeDefinition,
    ChallengePolicy,
    ENROLL_TRANSITIONS,
    EnrollState,
    EnrollmentRequest,
    enroll,
)
from tulip.gate import GATE_TRANSITIONS, GateState, gate
from tulip.sim import (
    HttpClient,
    ScenarioConfig,
    admin_call,
    provision_population,
    run_attacker_playbook,
    run_scenario,
    start_embedded_service,
)
from tulip.store import IdentityStore

from conftest import CHEAP_HASH, KEY1

NOW = 1_700_000_000
LIFETIME = 3600


def report(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}"
    if detail:
        line += f" -- {detail}"
    print(line)
    assert ok, line


def make_keyring():
    return tokens.SigningKeyring("k1", {"k1": KEY1})


def provision(store, username, password="pw", count=3):
    return AdminService(store).add_user(username, password, initial_count=count)


# ---------------------------------------------------------------------------
# Criterion 1: gate ladder conformance.
# 10,000 randomized requests; store access count is 0 for presence and
# signature/expiry failures and exactly 1 otherwise. Runtime < 30 s.


def test_gate_ladder_conformance():
    started = time.monotonic()
    keyring = make_keyring()
    store = IdentityStore(CHEAP_HASH)
    rng = random.Random(0xACCE551)

    fixtures = []  # (kind, token)
    for i in range(10):
        user = provision(store, f"u{i}")
        stale = tokens.mint_token(user, NOW, LIFETIME, keyring)
        store.bump_version(user.username)
        valid = tokens.mint_token(user, NOW, LIFETIME, keyring)
        expired = tokens.mint_token(user, NOW - 2 * LIFETIME, LIFETIME, keyring)
        ghost = AdminService(IdentityStore(CHEAP_HASH)).add_user(f"g{i}", "x")
        unknown = tokens.mint_token(ghost, NOW, LIFETIME, keyring)
        fixtures.append((valid, stale, expired, unknown))

    def tampered(token, rng):
        raw = bytearray(token.encode())
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(7)
        mutated = raw.decode("latin-1")
        return token if mutated == token else mutated

    counts = {"absent": 0, "tampered": 0, "expired": 0,
              "revoked": 0, "unknown": 0, "valid": 0}
    expected_calls = {"absent": 0, "tampered": 0, "expired": 0,
                      "revoked": 1, "unknown": 1, "valid": 1}
    expected_serve = {"valid"}
    for _ in range(10_000):
        kind = rng.choice(list(counts))
        valid, stale, expired, unknown = rng.choice(fixtures)
        token = {"absent": None, "valid": valid, "revoked": stale,
                 "expired": expired, "unknown": unknown,
                 "tampered": tampered(valid, rng)}[kind]
        before = store.counters["accesses"]
        decision = gate(token, store, keyring, NOW)
        calls = store.counters["accesses"] - before
        assert calls == expected_calls[kind], (kind, calls)
        assert decision.serve == (kind in expected_serve), kind
        counts[kind] += 1

    elapsed = time.monotonic() - started
    ok = all(counts.values()) and elapsed < 30
    report("gate ladder conformance (10,000 randomized requests)", ok,
           f"mix={counts}, elapsed={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: credential untouchability.
# Playbook: zero credential checks and zero MFA prompts for any request
# lacking a valid token. Scenario k=100, n=10, 50 attempts/attacker:
# breaches=0 across 100 seeds. Runtime < 2 min.


def test_credential_untouchability():
    started = time.monotonic()
    server, url, admin_token = start_embedded_service(mode="tulip")
    try:
        mfa_before = admin_call(url, admin_token, "stats", {})["service"].get(
            "mfa_prompts", 0)
        outcomes = run_attacker_playbook(url, admin_token)
        mfa_after = admin_call(url, admin_token, "stats", {})["service"].get(
            "mfa_prompts", 0)
        playbook_ok = mfa_after == mfa_before
        for variant, result in outcomes.items():
            if variant == "stolen_valid_cookie":
                continue
            playbook_ok = playbook_ok and (
                result["credential_checks"] == 0
                and not result["session_granted"]
                and not result["login_form_served"])

        k, n, attempts = 100, 10, 50
        population = provision_population(url, admin_token, k, n, prefix="acc")
        bad_seeds = []
        for seed in range(100):
            config = ScenarioConfig(k=k, n=n, attacker_attempts_per_user=attempts,
                                    seed=seed)
            result = run_scenario(config, url, admin_token,
                                  population=population, workers=32)
            # Exactly two verifications per honest user (enroll + login);
            # the 500 attacker attempts contribute none.
            if (result.breaches or result.mfa_prompts_triggered
                    or result.credential_checks != 2 * k):
                bad_seeds.append(seed)
    finally:
        server.shutdown()

    elapsed = time.monotonic() - started
    ok = playbook_ok and not bad_seeds and elapsed < 120
    report("credential untouchability (playbook + 100 scenario seeds)", ok,
           f"bad_seeds={bad_seeds}, playbook_ok={playbook_ok}, "
           f"elapsed={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 3: baseline contrast.
# Gate-disabled empirical breach frequency matches 1-(1-p)^(n*a) within
# +/-5 percentage points over 100 seeds for p in {0.01, 0.05, 0.1}.
# Runtime < 5 min.


def test_baseline_contrast():
    started = time.monotonic()
    k, n, attempts = 100, 10, 50
    results = {}
    server, url, admin_token = start_embedded_service(mode="baseline")
    try:
        for index, p in enumerate((0.01, 0.05, 0.1)):
            population = provision_population(url, admin_token, k, n,
                                              prefix=f"b{index}u")
            breached_seeds = 0
            analytic = None
            for seed in range(100):
                config = ScenarioConfig(
                    k=k, n=n, attacker_attempts_per_user=attempts, seed=seed,
                    mode="baseline", mfa_accept_probability=p)
                result = run_scenario(config, url, admin_token,
                                      population=population, workers=32)
                breached_seeds += result.breaches > 0
                analytic = result.analytic_breach_probability
            results[p] = (breached_seeds / 100, analytic)
    finally:
        server.shutdown()

    elapsed = time.monotonic() - started
    deviations = {p: abs(freq - analytic) for p, (freq, analytic) in results.items()}
    ok = max(deviations.values()) <= 0.05 and elapsed < 300
    report("baseline contrast (empirical vs analytic breach frequency)", ok,
           f"empirical/analytic={results}, elapsed={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 4: state-machine path exhaustion.
# Every edge of the enrollment and login-gate machines is exercised at
# runtime, and no accepting path skips both token validity and credential
# verification.


def _enroll_edges(outcome):
    """Name the edges along an enrollment trace, disambiguating the two
    VALIDATION -> DECLINED labels by the recorded decline reason."""
    names = {
        (EnrollState.RECEIVED, EnrollState.TOKEN_CHECK): "token_present",
        (EnrollState.RECEIVED, EnrollState.VALIDATION): "token_absent",
        (EnrollState.TOKEN_CHECK, EnrollState.ACCEPTED): "token_valid",
        (EnrollState.TOKEN_CHECK, EnrollState.VALIDATION): "token_invalid",
        (EnrollState.VALIDATION, EnrollState.QUOTA_CHECK): "authn_valid",
        (EnrollState.QUOTA_CHECK, EnrollState.ACCEPTED): "quota_available",
        (EnrollState.QUOTA_CHECK, EnrollState.DECLINED): "quota_exhausted",
    }
    edges = []
    for src, dst in zip(outcome.trace, outcome.trace[1:]):
        if (src, dst) == (EnrollState.VALIDATION, EnrollState.DECLINED):
            edges.append("authn_invalid" if outcome.reason == "invalid_credentials"
                         else "challenge_failed")
        else:
            edges.append(names[(src, dst)])
    return edges


def test_state_machine_path_exhaustion():
    keyring = make_keyring()
    store = IdentityStore(CHEAP_HASH)
    AdminService(store).add_user("path", "pw", initial_count=5,
                                 attributes={"pin": "1234"})
    policy = ChallengePolicy((ChallengeDefinition("pin", "static_attribute"),))
    good = {"pin": "1234"}

    def run(username="path", password="pw", token=None, responses=good):
        return enroll(EnrollmentRequest(username, password, token, dict(responses)),
                      store, keyring, policy, NOW)

    exercised = set()

    fresh = run()
    exercised.update(_enroll_edges(fresh))
    assert fresh.accepted and fresh.token

    reuse = run(token=fresh.token)
    exercised.update(_enroll_edges(reuse))
    assert reuse.accepted and reuse.reused and reuse.token is None

    store.bump_version("path")
    revoked_fallthrough = run(token=fresh.token)
    exercised.update(_enroll_edges(revoked_fallthrough))
    assert revoked_fallthrough.accepted and not revoked_fallthrough.reused

    wrong_password = run(password="nope")
    exercised.update(_enroll_edges(wrong_password))
    assert wrong_password.reason == "invalid_credentials"

    bad_challenge = run(responses={"pin": "0000"})
    exercised.update(_enroll_edges(bad_challenge))
    assert bad_challenge.reason == "challenge_failed"

    store.set_count("path", 0)
    exhausted = run()
    exercised.update(_enroll_edges(exhausted))
    assert exhausted.reason == "quota_exhausted"

    gate_edges = set()
    fresh_token = tokens.mint_token(store.find_by_username("path"), NOW,
                                    LIFETIME, keyring)
    for token, label in ((None, "absent"), (fresh_token, "valid"),
                         ("x.y.z", "garbage")):
        decision = gate(token, store, keyring, NOW)
        for src, dst in zip(decision.trace, decision.trace[1:]):
            gate_edges.add({
                (GateState.RECEIVED, GateState.TOKEN_CHECK): "token_present",
                (GateState.RECEIVED, GateState.REJECTED): "token_absent",
                (GateState.TOKEN_CHECK, GateState.SERVED): "token_valid",
                (GateState.TOKEN_CHECK, GateState.REJECTED): "token_invalid",
            }[(src, dst)])

    all_enroll_edges = {label for moves in ENROLL_TRANSITIONS.values()
                        for label in moves}
    all_gate_edges = {label for moves in GATE_TRANSITIONS.values() for label in moves}
    missing = (all_enroll_edges - exercised) | (all_gate_edges - gate_edges)

    # Structural check: enumerate every path; an accepting path must pass
    # through token validation or credential verification.
    def paths(transitions, start):
        frontier = [(start, ())]
        complete = []
        while frontier:
            state, edges = frontier.pop()
            if state not in transitions:
                complete.append((state, edges))
                continue
            for label, nxt in transitions[state].items():
                frontier.append((nxt, edges + (label,)))
        return complete

    unguarded = [
        path for end, path in paths(ENROLL_TRANSITIONS, EnrollState.RECEIVED)
        if end is EnrollState.ACCEPTED
        and "token_valid" not in path and "authn_valid" not in path
    ] + [
        path for end, path in paths(GATE_TRANSITIONS, GateState.RECEIVED)
        if end is GateState.SERVED and "token_valid" not in path
    ]

    ok = not missing and not unguarded
    report("state-machine path exhaustion", ok,
           f"missing_edges={sorted(missing)}, unguarded_accept_paths={unguarded}")


# ---------------------------------------------------------------------------
# Criterion 5: revocation completeness.
# Over 1,000 randomized interleavings of mint / bump / global-bump / gate,
# no token minted before a bump for its user ever passes the gate afterwards.


def test_revocation_completeness():
    keyring = make_keyring()
    violations = 0
    rng = random.Random(0x5EED)
    for _ in range(1_000):
        store = IdentityStore(CHEAP_HASH)
        users = [provision(store, f"r{i}") for i in range(3)]
        minted = []  # (username, token, version_at_mint)

        def check_all():
            nonlocal violations
            for username, token, mint_version in minted:
                current = store.find_by_username(username).sso_jwt_version
                decision = gate(token, store, keyring, NOW + 1)
                if current != mint_version and decision.serve:
                    violations += 1
                if current == mint_version and not decision.serve:
                    violations += 1

        for _ in range(rng.randrange(6, 14)):
            op = rng.choices(("mint", "bump", "global_bump", "gate"),
                             weights=(4, 3, 1, 4))[0]
            user = rng.choice(users)
            record = store.find_by_username(user.username)
            if op == "mint":
                minted.append((user.username,
                               tokens.mint_token(record, NOW, LIFETIME, keyring),
                               record.sso_jwt_version))
            elif op == "bump":
                store.bump_version(user.username)
                check_all()
            elif op == "global_bump":
                store.global_bump()
                check_all()
            elif minted:
                username, token, mint_version = rng.choice(minted)
                decision = gate(token, store, keyring, NOW + 1)
                current = store.find_by_username(username).sso_jwt_version
                if decision.serve != (current == mint_version):
                    violations += 1
        check_all()

    report("revocation completeness (1,000 interleavings)", violations == 0,
           f"violations={violations}")


# ---------------------------------------------------------------------------
# Criterion 6: quota exactness.
# N in 1..32 concurrent enrollments against count c in 0..8 always yield
# exactly min(N, c) accepted-with-new-token outcomes; 100 repetitions per cell.


def test_quota_exactness():
    started = time.monotonic()
    keyring = make_keyring()
    policy = ChallengePolicy()
    store = IdentityStore(CHEAP_HASH)
    provision(store, "q", count=0)
    request = EnrollmentRequest("q", "pw")
    failures = []

    with concurrent.futures.ThreadPoolExecutor(max_workers=32) as pool:
        for n_concurrent, count in itertools.product(range(1, 33), range(9)):
            for rep in range(100):
                store.set_count("q", count)
                outcomes = list(pool.map(
                    lambda _: enroll(request, store, keyring, policy, NOW),
                    range(n_concurrent)))
                accepted = sum(1 for o in outcomes if o.accepted and o.token)
                if accepted != min(n_concurrent, count):
                    failures.append((n_concurrent, count, rep, accepted))
                    break

    elapsed = time.monotonic() - started
    report("quota exactness (N in 1..32, c in 0..8, 100 reps/cell)",
           not failures, f"failures={failures[:5]}, elapsed={elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 7: forgery resistance.
# >= 10,000 bit-flip and segment-splice mutations of valid tokens all reject
# with zero store calls.


def test_forgery_resistance():
    keyring = make_keyring()
    store = IdentityStore(CHEAP_HASH)
    users = [provision(store, f"f{i}") for i in range(6)]
    valid = [tokens.mint_token(u, NOW, LIFETIME, keyring) for u in users]

    mutations = []
    for token in valid:
        raw = token.encode()
        for position in range(len(raw)):
            for bit in range(8):
                mutated = bytearray(raw)
                mutated[position] ^= 1 << bit
                mutations.append(mutated.decode("latin-1"))
    # Segment splices: cross-token segment recombination, drops, duplications.
    segments = [t.split(".") for t in valid]
    for (i, a), (j, b) in itertools.permutations(enumerate(segments), 2):
        mutations.append(".".join([a[0], b[1], a[2]]))
        mutations.append(".".join([b[0], a[1], a[2]]))
        mutations.append(".".join([a[0], a[1], b[2]]))
    for a in segments:
        mutations.append(".".join(a[:2]))
        mutations.append(".".join(a + [a[2]]))

    # The token header is constant, so a header swap between two tokens
    # reassembles an original; only genuine mutations are under test.
    originals = set(valid)
    tested = 0
    accepted = 0
    store_calls = 0
    for mutated in mutations:
        if mutated in originals:
            continue
        tested += 1
        before = store.counters["accesses"]
        decision = gate(mutated, store, keyring, NOW)
        accepted += decision.serve
        store_calls += store.counters["accesses"] - before

    ok = tested >= 10_000 and accepted == 0 and store_calls == 0
    report("forgery resistance (bit flips and segment splices)", ok,
           f"mutations={tested}, accepted={accepted}, store_calls={store_calls}")


# ---------------------------------------------------------------------------
# Criterion 8: rejection indistinguishability.
# Response bytes (status, headers modulo date, body) identical across all
# five gate reason-classes.


def test_rejection_indistinguishability(service_factory):
    store = IdentityStore(CHEAP_HASH)
    AdminService(store).add_user("alice", "wonderland", initial_count=5)
    svc, _, url, _ = service_factory(store=store)
    client = HttpClient(url)
    creds = {"username": "alice", "password": "wonderland"}

    observed = {}

    def capture(reason_class, method="GET"):
        status, headers, body = client.request(method, "/login",
                                               form=creds if method == "POST" else None)
        headers = tuple(sorted((k, v) for k, v in headers.items()
                               if k.lower() != "date"))
        observed[reason_class] = (status, headers, body)

    capture("no_token")
    capture("no_token_post", method="POST")
    client.cookie = "AAAA.BBBB.CCCC"
    capture("bad_signature")
    client.clear_cookies()
    client.request("POST", "/enroll", form=creds)
    store.bump_version("alice")
    capture("version_mismatch")
    client.clear_cookies()
    client.request("POST", "/enroll", form=creds)
    AdminService(store).rotate_ouid("alice")
    capture("unknown_ouid")
    client.clear_cookies()
    client.request("POST", "/enroll", form=creds)
    svc.clock = lambda: NOW + 10 ** 11
    capture("expired")
    client.close()

    distinct = set(observed.values())
    statuses = {status for status, _, _ in observed.values()}
    ok = len(distinct) == 1 and statuses == {401}
    report("rejection indistinguishability (five reason-classes)", ok,
           f"distinct_responses={len(distinct)}, statuses={sorted(statuses)}")
