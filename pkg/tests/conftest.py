import secrets

import pytest

from tulip.admin import AdminService
from tulip.enroll import ChallengePolicy
from tulip.service import TulipService, start_in_thread
from tulip.store import IdentityStore, ScryptParams
from tulip.tokens import SigningKeyring

# Cheap memory-hard parameters: tests exercise logic, not hash strength.
CHEAP_HASH = ScryptParams(log_n=4, r=8, p=1)

KEY1 = bytes(range(32))
KEY2 = bytes(range(32, 64))


@pytest.fixture
def keyring():
    return SigningKeyring("k1", {"k1": KEY1})


@pytest.fixture
def store():
    return IdentityStore(CHEAP_HASH)


@pytest.fixture
def admin(store):
    return AdminService(store)


@pytest.fixture
def alice(admin):
    return admin.add_user("alice", "wonderland", initial_count=3)


@pytest.fixture
def service_factory():
    """Build a live loopback service; servers are shut down on teardown."""
    servers = []

    def build(mode="tulip", challenges=ChallengePolicy(), store=None,
              admin_secret=None, **kwargs):
        store = store if store is not None else IdentityStore(CHEAP_HASH)
        admin_secret = admin_secret or secrets.token_hex(8)
        keyring = SigningKeyring("k1", {"k1": KEY1})
        kwargs.setdefault("dev_insecure", True)
        svc = TulipService(store, keyring, admin_secret, mode=mode,
                           challenges=challenges, **kwargs)
        server, url = start_in_thread(svc)
        servers.append(server)
        return svc, server, url, admin_secret

    yield build
    for server in servers:
        server.shutdown()
