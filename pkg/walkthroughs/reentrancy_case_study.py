"""
Blocking a re-entrant withdrawal
================================

A Bank pays out before zeroing the balance, so an Attacker contract can
re-enter ``withdraw`` from its fallback. First the attack runs on an
unprotected Bank; then the Bank is guarded and the Token Service runs the
call in a sandbox before signing anything.
"""

from smacs.chain import Chain, bank_attacker_fixture
from smacs.client import Hop, LocalTokenClient, client_request_and_send
from smacs.errors import Denied
from smacs.rules import rules_from_json
from smacs.service import ContractEntry, MethodPolicy, TokenService
from smacs.token_core import ArgPair, TokenType, hex_address, keygen

mallory, alice, ts_key = keygen(b"mallory"), keygen(b"alice"), keygen(b"ts")

# without tokens: deposit 2, let alice deposit 10, then withdraw
chain = Chain(clock=1_000)
fx = bank_attacker_fixture(chain, attacker_key=mallory)
chain.fund(mallory.address, 100)
chain.fund(alice.address, 100)
chain.submit_transaction(chain.transaction(mallory, fx["attacker"], "deposit", value=2))
chain.submit_transaction(chain.transaction(alice, fx["bank"], "addBalance", value=10))
r = chain.submit_transaction(chain.transaction(
    mallory, fx["attacker"], "withdraw", [("account", hex_address(fx["attacker"]))]))
print("unguarded trace:", " -> ".join(f"{f['name']}.{f['method']}" for f in r.trace))
print("attacker holds", chain.balance_of(fx["attacker"]), "after depositing 2")

# the same world, but Bank checks tokens and withdraw needs an Argument token
chain = Chain(clock=1_000)
fx = bank_attacker_fixture(chain, attacker_key=mallory, guard_pk=ts_key.pk)
bank = fx["bank"]
chain.fund(mallory.address, 100)
chain.fund(alice.address, 100)
entry = ContractEntry(bank, chain.method_names(bank), policies={
    "withdraw": MethodPolicy(allowed_types=frozenset({TokenType.ARGUMENT}), caller_arg="account")})
rules = rules_from_json({
    "sender": {"whitelist": [hex_address(mallory.address), hex_address(alice.address)]},
    "method": {"addBalance": {"blacklist": []}, "withdraw": {"blacklist": []}},
    "argument": {"account": {"blacklist": []}},
    "validators": ["ecf"],
})
service = TokenService(ts_key, rules, {bank: entry}, clock=chain.now, sim=lambda: chain)
ts = LocalTokenClient(service)

client_request_and_send(ts, chain, mallory, [Hop(fx["attacker"], "deposit"), Hop(bank, "addBalance")], 2)
client_request_and_send(ts, chain, alice, [Hop(bank, "addBalance")], 10)
print("bank balance before the attack:", chain.balance_of(bank))

# the TS simulates the withdrawal, sees Bank re-entered, and refuses
as_attacker = (ArgPair("account", hex_address(fx["attacker"])),)
try:
    client_request_and_send(ts, chain, mallory, [Hop(fx["attacker"], "withdraw", as_attacker),
                                                 Hop(bank, "withdraw", as_attacker, TokenType.ARGUMENT)])
except Denied as exc:
    print("token denied:", exc.reason, "|", service.last_verdicts["ecf"])
print("bank balance after the attempt:", chain.balance_of(bank))

# an honest withdrawal still gets its token
honest = client_request_and_send(ts, chain, alice, [
    Hop(bank, "withdraw", (ArgPair("account", hex_address(alice.address)),), TokenType.ARGUMENT)])
print("alice withdraws:", honest.status, "-> alice holds", chain.balance_of(alice.address))
