import pytest

from smacs.chain import (
    AltLedgerHead,
    Bank,
    BuggyLedgerHead,
    Chain,
    Counter,
    LedgerHead,
    bank_attacker_fixture,
)
from smacs.errors import HeadConfigError
from smacs.token_core import ArgPair, TokenRequest, TokenType, hex_address
from smacs.validators import (
    SimulatedCall,
    ValidatorEnv,
    ecf_check,
    find_reentry,
    nversion_uniform,
    run_ecf,
    run_nversion,
)


@pytest.fixture
def bank_world(mallory, alice):
    chain = Chain(clock=10)
    fx = bank_attacker_fixture(chain, attacker_key=mallory)
    chain.fund(mallory.address, 20)
    chain.fund(alice.address, 20)
    chain.execute_call(mallory.address, fx["attacker"], "deposit", value=2)
    chain.execute_call(alice.address, fx["bank"], "addBalance", value=10)
    return chain, fx


def deposit_call(chain, target, who, amount="1"):
    return SimulatedCall(target, chain.selector(target, "deposit"), (ArgPair("amount", amount),),
                         who, 0, who)


class TestNVersion:
    def test_identical_counters(self, alice):
        chain = Chain()
        heads = [chain.register_contract(Counter, label=f"c{k}") for k in range(3)]
        call = SimulatedCall(heads[0], Counter.selector("increment"), (ArgPair("amount", "5"),),
                             alice.address)
        assert nversion_uniform(call, heads, chain).passed

    def test_equivalent_rewrite_passes(self, alice):
        chain = Chain()
        heads = [chain.register_contract(LedgerHead), chain.register_contract(AltLedgerHead)]
        assert nversion_uniform(deposit_call(chain, heads[0], alice.address), heads, chain).passed

    def test_buggy_head_named(self, alice):
        chain = Chain()
        good = chain.register_contract(LedgerHead, label="good")
        buggy = chain.register_contract(BuggyLedgerHead, label="buggy")
        # direct execution shows the two heads disagree
        r_good = chain.snapshot().execute_call(alice.address, good, "deposit", [ArgPair("amount", "1")])
        r_bug = chain.snapshot().execute_call(alice.address, buggy, "deposit", [ArgPair("amount", "1")])
        assert (r_good.return_value, r_bug.return_value) == (1, 2)
        v = nversion_uniform(deposit_call(chain, good, alice.address), [good, buggy], chain)
        assert not v.passed
        assert v.detail == f"heads diverge: buggy@{hex_address(buggy)}"

    def test_majority_reference(self, alice):
        chain = Chain()
        heads = [chain.register_contract(LedgerHead, label="a"),
                 chain.register_contract(BuggyLedgerHead, label="b"),
                 chain.register_contract(AltLedgerHead, label="c")]
        v = nversion_uniform(deposit_call(chain, heads[0], alice.address), heads, chain)
        assert v.detail == f"heads diverge: b@{hex_address(heads[1])}"

    def test_all_trap_alike(self, alice):
        chain = Chain()
        heads = [chain.register_contract(LedgerHead), chain.register_contract(AltLedgerHead)]
        call = deposit_call(chain, heads[0], alice.address, amount="not-a-number")
        v = nversion_uniform(call, heads, chain)
        assert v.passed and "trapped alike" in v.detail

    def test_preconditions(self, alice):
        chain = Chain()
        a = chain.register_contract(LedgerHead)
        c = chain.register_contract(Counter)
        call = deposit_call(chain, a, alice.address)
        with pytest.raises(HeadConfigError):
            nversion_uniform(call, [a], chain)
        with pytest.raises(HeadConfigError):
            nversion_uniform(call, [a, a], chain)
        with pytest.raises(HeadConfigError):
            nversion_uniform(call, [a, c], chain)

    def test_isolation_and_determinism(self, alice):
        chain = Chain()
        heads = [chain.register_contract(LedgerHead), chain.register_contract(BuggyLedgerHead)]
        before = chain.state_digest()
        v1 = nversion_uniform(deposit_call(chain, heads[0], alice.address), heads, chain)
        v2 = nversion_uniform(deposit_call(chain, heads[0], alice.address), heads, chain)
        assert chain.state_digest() == before
        assert (v1.passed, v1.detail) == (v2.passed, v2.detail)


class TestEcf:
    def test_attack_path_flagged(self, bank_world, mallory):
        chain, fx = bank_world
        call = SimulatedCall(fx["attacker"], chain.selector(fx["attacker"], "withdraw"), (),
                             mallory.address, 0, mallory.address)
        v = ecf_check(call, chain)
        assert not v.passed
        assert v.detail == "re-entrancy: Bank.withdraw -> Attacker.fallback -> Bank.withdraw"

    def test_bank_withdraw_called_through_attacker(self, bank_world, mallory):
        chain, fx = bank_world
        call = SimulatedCall(fx["bank"], Bank.selector("withdraw"),
                             (ArgPair("account", hex_address(fx["attacker"])),),
                             fx["attacker"], 0, mallory.address)
        v = ecf_check(call, chain)
        assert not v.passed and v.detail.startswith("re-entrancy: Bank.withdraw")

    def test_honest_withdraw(self, bank_world, alice):
        chain, fx = bank_world
        call = SimulatedCall(fx["bank"], Bank.selector("withdraw"), (), alice.address)
        assert ecf_check(call, chain).passed

    def test_deposit(self, bank_world, alice):
        chain, fx = bank_world
        call = SimulatedCall(fx["bank"], Bank.selector("addBalance"), (), alice.address)
        assert ecf_check(call, chain).passed

    def test_trap_is_failure_with_site(self, bank_world, alice):
        chain, fx = bank_world
        call = SimulatedCall(fx["bank"], Bank.selector("withdraw"),
                             (ArgPair("account", hex_address(fx["attacker"])),), alice.address)
        v = ecf_check(call, chain)
        assert not v.passed and v.detail == "trap at Bank.withdraw: account is not msg.sender"

    def test_isolation(self, bank_world, mallory):
        chain, fx = bank_world
        before = chain.state_digest()
        call = SimulatedCall(fx["attacker"], chain.selector(fx["attacker"], "withdraw"), (),
                             mallory.address, 0, mallory.address)
        first = ecf_check(call, chain)
        assert chain.state_digest() == before
        assert ecf_check(call, chain).detail == first.detail

    def test_every_draining_path_fails(self, bank_world, mallory):
        """Whenever the attacker walks away with more than its deposit, ecf says no."""
        chain, fx = bank_world
        for caller, target, name in [(mallory.address, fx["attacker"], "withdraw"),
                                     (fx["attacker"], fx["bank"], "withdraw")]:
            call = SimulatedCall(target, chain.selector(target, name), (), caller, 0, mallory.address)
            box = chain.snapshot()
            box.enforce_guards = False
            box.execute_call(mallory.address, target, call.method, (), caller=caller)
            drained = box.balance_of(fx["attacker"]) > 2
            assert drained
            assert not ecf_check(call, chain).passed


def test_find_reentry_ignores_returned_frames():
    trace = [
        {"depth": 0, "contract": "A", "name": "A", "method": "f"},
        {"depth": 1, "contract": "B", "name": "B", "method": "g"},
        {"depth": 1, "contract": "A", "name": "A", "method": "h"},  # sibling, A still live
        {"depth": 0, "contract": "B", "name": "B", "method": "x"},
    ]
    path = find_reentry(trace)
    assert [f["method"] for f in path] == ["f", "h"]
    flat = [{"depth": 0, "contract": "A"}, {"depth": 1, "contract": "B"}, {"depth": 1, "contract": "C"},
            {"depth": 0, "contract": "A"}]
    assert find_reentry(flat) is None


class TestEnv:
    def test_caller_arg_redirects_msg_sender(self, bank_world, mallory):
        chain, fx = bank_world
        env = ValidatorEnv(lambda: chain, {}, {(fx["bank"], Bank.selector("withdraw")): "account"})
        req = TokenRequest(TokenType.ARGUMENT, fx["bank"], mallory.address, Bank.selector("withdraw"),
                           (ArgPair("account", hex_address(fx["attacker"])),))
        call = env.simulated_call(req)
        assert call.caller == fx["attacker"] and call.origin == mallory.address
        assert not run_ecf(req, env).passed

    def test_missing_heads_is_a_failed_verdict(self, alice):
        chain = Chain()
        a = chain.register_contract(LedgerHead)
        env = ValidatorEnv(lambda: chain)
        req = TokenRequest(TokenType.ARGUMENT, a, alice.address, LedgerHead.selector("deposit"),
                           (ArgPair("amount", "1"),))
        v = run_nversion(req, env)
        assert not v.passed and v.detail.startswith("misconfigured")


def test_honest_contract_receiving_funds_passes(mallory, alice):
    chain = Chain(clock=10)
    fx = bank_attacker_fixture(chain, attacker_key=mallory, is_attack=False)
    chain.fund(mallory.address, 20)
    chain.execute_call(mallory.address, fx["attacker"], "deposit", value=2)
    call = SimulatedCall(fx["attacker"], chain.selector(fx["attacker"], "withdraw"), (),
                         mallory.address, 0, mallory.address)
    assert ecf_check(call, chain).passed


def test_fallback_frames_are_callbacks():
    trace = [{"depth": 0, "contract": "A", "method": "w"}, {"depth": 1, "contract": "B", "method": "x"},
             {"depth": 2, "contract": "A", "method": "fallback"}]
    assert find_reentry(trace) is None
    trace.append({"depth": 3, "contract": "B", "method": "x"})
    assert [f["contract"] for f in find_reentry(trace)] == ["B", "A", "B"]
