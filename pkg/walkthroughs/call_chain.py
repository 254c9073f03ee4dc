"""
Tokens along a call chain
=========================

One transaction calls SC_A, which calls SC_B, which calls SC_C. Each
contract has its own guard and picks its own token out of the shared
token array. The guard work grows with the number of links.
"""

from smacs.chain import Chain, call_chain_fixture
from smacs.client import Hop, LocalTokenClient, client_request_and_send, fetch_tokens, send_with_tokens
from smacs.rules import rules_from_json
from smacs.service import ContractEntry, TokenService
from smacs.token_core import ArgPair, TokenType, decode_token_array, hex_address, keygen

alice, ts_key = keygen(b"alice"), keygen(b"ts")
note = (ArgPair("note", "hello"),)
rules = rules_from_json({"sender": {"whitelist": [hex_address(alice.address)]},
                         "method": {"ping": {"blacklist": []}},
                         "argument": {"note": {"blacklist": []}}})


def world(depth):
    chain = Chain(clock=1_000)
    links = call_chain_fixture(chain, depth, guard_pk=ts_key.pk, bitmap_bits=64)
    registry = {c: ContractEntry(c, chain.method_names(c), one_time=True) for c in links}
    ts = LocalTokenClient(TokenService(ts_key, rules, registry, clock=chain.now))
    hops = [Hop(c, "ping", note, TokenType.ARGUMENT) for c in links]
    return chain, links, ts, hops


chain, links, ts, hops = world(3)
array = fetch_tokens(ts, chain, alice, hops)
for addr, tk in decode_token_array(array):
    print(chain.label(addr), "gets index", tk.index, "type", tk.type.name)

r = send_with_tokens(chain, alice, hops, array)
print("chain of 3:", r.status, r.cost.to_dict())

# the same array again: every index is spent, so the first guard refuses
again = send_with_tokens(chain, alice, hops, array)
print("replayed array:", again.status, again.reason, "at", again.site)

# guard cost per depth
base = None
for k in range(1, 5):
    chain, links, ts, hops = world(k)
    cost = client_request_and_send(ts, chain, alice, hops).cost
    base = base or cost.units()
    print(f"depth {k}: {cost.sig_verifies} signatures, {cost.units()} units, "
          f"{cost.units() / (k * base):.3f} of k x depth-1")
