import pytest

from smacs.chain import Chain
from smacs.rules import rules_from_json
from smacs.service import ContractEntry, TokenService
from smacs.token_core import hex_address, keygen


@pytest.fixture(scope="session")
def ts_key():
    return keygen(b"test-ts")


@pytest.fixture(scope="session")
def alice():
    return keygen(b"alice")


@pytest.fixture(scope="session")
def bob():
    return keygen(b"bob")


@pytest.fixture(scope="session")
def mallory():
    return keygen(b"mallory")


@pytest.fixture
def chain():
    return Chain(clock=1_000)


def open_rules(*senders, methods=(), args=(), validators=()):
    """Whitelist ``senders``; leave every named method and argument open."""
    return rules_from_json({
        "sender": {"whitelist": [hex_address(s) for s in senders]},
        "method": {m: {"blacklist": []} for m in methods},
        "argument": {a: {"blacklist": []} for a in args},
        "validators": list(validators),
    })


def service_for(chain, ts_key, contracts, rules, **entry_kw):
    registry = {c: ContractEntry(c, chain.method_names(c), **entry_kw) for c in contracts}
    return TokenService(ts_key, rules, registry, clock=chain.now, sim=lambda: chain)
