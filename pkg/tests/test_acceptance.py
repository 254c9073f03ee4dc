"""The ten acceptance criteria, each with its runtime limit.

Every test prints one ``PASS``/``FAIL`` line straight to the terminal, so
``pytest -v`` output carries the verdicts even when capture is on.
"""

import random
import time

import pytest

from smacs.bench import BATCH_SIZES, bench_fixture, bench_throughput, check_shape
from smacs.bitmap import bits_to_kb, new_bitmap, required_bits
from smacs.chain import (
    AltLedgerHead,
    Attacker,
    Bank,
    BuggyLedgerHead,
    Chain,
    Echo,
    LedgerHead,
    bank_attacker_fixture,
    call_chain_fixture,
)
from smacs.client import Hop, LocalTokenClient, client_request_and_send, fetch_tokens
from smacs.errors import Denied, NonceUsed
from smacs.rules import rules_from_json
from smacs.service import ContractEntry, MethodPolicy, TokenService
from smacs.token_core import (
    ArgPair,
    Token,
    TokenRequest,
    TokenType,
    decode_token,
    encode_args,
    encode_token,
    encode_token_array,
    hex_address,
    issue_token,
    keygen,
    method_id,
    verify_token_for_request,
)

from conftest import open_rules, service_for
from test_bitmap import exhaustive_oracle_check, fuzz_oracle_check


@pytest.fixture
def verdict(capsys):
    """Call with (number, label, ok, detail); prints the line, then asserts."""
    started = time.perf_counter()

    def emit(number, label, ok, detail="", limit=None):
        elapsed = time.perf_counter() - started
        in_time = limit is None or elapsed < limit
        passed = ok and in_time
        extra = f" ({detail})" if detail else ""
        timing = f" [{elapsed:.3f}s" + (f" < {limit}s]" if limit is not None else "]")
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {number}: {label}{extra}{timing}")
        assert ok, f"criterion {number}: {label}{extra}"
        assert in_time, f"criterion {number}: {elapsed:.3f}s exceeds {limit}s"

    return emit


def test_criterion_01_bitmap_worked_example(verdict):
    started = time.perf_counter()
    bm = new_bitmap(8)
    ok = all(bm.check_and_mark(i) for i in (0, 1, 4, 5))
    states = [bm.window()]
    ok &= bm.check_and_mark(9)
    states.append(bm.window())
    ok &= bm.check_and_mark(13)
    states.append(bm.window())
    rejected = [bm.check_and_mark(i) for i in (2, 3, 13)]
    elapsed = time.perf_counter() - started
    expected = [(0, 7, 0, 7), (2, 9, 2, 1), (6, 13, 6, 5)]
    ok = ok and states == expected and rejected == [False, False, False]
    verdict(1, "bitmap worked example", ok and elapsed < 1e-3,
            f"states {states}, 2/3/13 rejected={not any(rejected)}, {elapsed * 1e6:.0f} us")


def test_criterion_02_bitmap_oracle_equivalence(verdict):
    try:
        transitions, exhaustive_bad = exhaustive_oracle_check(max_n=8, max_index=24, depth=6), 0
    except AssertionError as exc:
        transitions, exhaustive_bad = str(exc), 1
    fuzz_bad = fuzz_oracle_check(sequences=100_000, n=64)
    verdict(2, "bitmap matches windowed-set oracle", exhaustive_bad == 0 and fuzz_bad == 0,
            f"{transitions} exhaustive transitions, 100000 fuzz sequences, "
            f"mismatches {exhaustive_bad}+{fuzz_bad}", limit=60)


def test_criterion_03_guard_adversarial(verdict, ts_key, alice, bob):
    chain = Chain(clock=1_000)
    target = chain.register_contract(Bank, label="Bank", guard_pk=ts_key.pk)
    other = chain.register_contract(Bank, label="Other", guard_pk=ts_key.pk)
    sel_w, sel_b = Bank.selector("withdraw"), Bank.selector("balanceOf")
    args = [ArgPair("account", hex_address(alice.address))]
    calldata = encode_args(args)

    def mint(ttype, selector=None, margs=(), contract=target, origin=alice.address, expire=2_000):
        return issue_token(ts_key.sk, TokenRequest(ttype, contract, origin, selector, tuple(margs)),
                           expire)

    def call(tk, method="withdraw", data=calldata, origin=alice.address):
        arr = encode_token_array([(target, tk)])
        return chain.execute_call(origin, target, method, data, token_array=arr)

    valid = [call(mint(TokenType.SUPER)), call(mint(TokenType.METHOD, sel_w)),
             call(mint(TokenType.ARGUMENT, sel_w, args))]
    cases = {
        "expired": [call(mint(TokenType.SUPER, expire=999))],
        "wrong origin": [call(mint(TokenType.SUPER), origin=bob.address)],
        "wrong contract": [call(mint(TokenType.SUPER, contract=other))],
        "wrong selector": [call(mint(TokenType.METHOD, sel_b))],
    }
    arg_tk = mint(TokenType.ARGUMENT, sel_w, args)
    mutated = []
    for k in range(len(calldata)):
        bad = bytearray(calldata)
        bad[k] ^= 0x01
        mutated.append(call(arg_tk, data=bytes(bad)))
    cases["mutated calldata byte"] = mutated
    good = mint(TokenType.SUPER)
    sig_mut = []
    for k in range(len(good.signature)):
        sig = bytearray(good.signature)
        sig[k] ^= 0x01
        sig_mut.append(call(Token(good.type, good.expire, good.index, bytes(sig))))
    cases["mutated signature byte"] = sig_mut

    accepted = all(r.ok for r in valid)
    total = sum(len(v) for v in cases.values())
    rejected = sum(1 for v in cases.values() for r in v if not r.ok and r.reason == "token")
    verdict(3, "guard adversarial suite", accepted and rejected == total,
            f"valid accepted={accepted}, rejected {rejected}/{total}", limit=10)


def test_criterion_04_replay_and_substitution(verdict, ts_key, alice, bob):
    chain = Chain(clock=1_000)
    echo = chain.register_contract(Echo)
    tx = chain.transaction(alice, echo, "echo")
    first_ok = chain.submit_transaction(tx).ok
    try:
        chain.submit_transaction(tx)
        replay = "accepted"
    except NonceUsed:
        replay = "NonceUsed"

    guarded = chain.register_contract(Echo, guard_pk=ts_key.pk)
    tk = issue_token(ts_key.sk, TokenRequest(TokenType.SUPER, guarded, alice.address), 2_000)
    arr = encode_token_array([(guarded, tk)])
    own = chain.submit_transaction(chain.transaction(alice, guarded, "echo", token_array=arr))
    lifted = chain.submit_transaction(chain.transaction(bob, guarded, "echo", token_array=arr))
    guard_false = not lifted.ok and lifted.reason == "token" and lifted.cost.sig_verifies == 1
    verdict(4, "replay and token substitution",
            first_ok and replay == "NonceUsed" and own.ok and guard_false,
            f"replay -> {replay}, lifted token guard={'false' if guard_false else 'true'}", limit=1)


def _bank_world(ts_key, mallory, alice, guarded):
    chain = Chain(clock=1_000)
    fx = bank_attacker_fixture(chain, attacker_key=mallory, guard_pk=ts_key.pk if guarded else None)
    chain.fund(mallory.address, 100)
    chain.fund(alice.address, 100)
    return chain, fx


def test_criterion_05_reentrancy_case_study(verdict, ts_key, mallory, alice):
    # unguarded: the attacker walks away with more than it put in
    chain, fx = _bank_world(ts_key, mallory, alice, guarded=False)
    chain.submit_transaction(chain.transaction(mallory, fx["attacker"], "deposit", value=2))
    chain.submit_transaction(chain.transaction(alice, fx["bank"], "addBalance", value=10))
    chain.submit_transaction(chain.transaction(mallory, fx["attacker"], "withdraw",
                                               [("account", hex_address(fx["attacker"]))]))
    drained = chain.balance_of(fx["attacker"])
    unguarded_loses = drained > Attacker.DEPOSIT

    # guarded, with the ecf validator in the TS
    chain, fx = _bank_world(ts_key, mallory, alice, guarded=True)
    bank = fx["bank"]
    entry = ContractEntry(bank, Bank.method_names(), policies={
        "withdraw": MethodPolicy(allowed_types=frozenset({TokenType.ARGUMENT}), caller_arg="account")})
    rules = rules_from_json({
        "sender": {"whitelist": [hex_address(mallory.address), hex_address(alice.address)]},
        "method": {"addBalance": {"blacklist": []}, "withdraw": {"blacklist": []}},
        "argument": {"account": {"blacklist": []}},
        "validators": ["ecf"],
    })
    ts = LocalTokenClient(TokenService(ts_key, rules, {bank: entry}, clock=chain.now,
                                       sim=lambda: chain))
    deposit = client_request_and_send(ts, chain, mallory, [Hop(fx["attacker"], "deposit"),
                                                          Hop(bank, "addBalance")], value=2)
    honest_in = client_request_and_send(ts, chain, alice, [Hop(bank, "addBalance")], value=10)
    pre = (chain.balance_of(bank), dict(chain.contract(bank).storage), chain.state_digest())
    attack = [Hop(fx["attacker"], "withdraw", (ArgPair("account", hex_address(fx["attacker"])),)),
              Hop(bank, "withdraw", (ArgPair("account", hex_address(fx["attacker"])),), TokenType.ARGUMENT)]
    try:
        client_request_and_send(ts, chain, mallory, attack)
        denial = "issued"
    except Denied as exc:
        denial = exc.reason
    post = (chain.balance_of(bank), dict(chain.contract(bank).storage), chain.state_digest())
    honest_out = client_request_and_send(
        ts, chain, alice, [Hop(bank, "withdraw", (ArgPair("account", hex_address(alice.address)),),
                               TokenType.ARGUMENT)])
    honest = deposit.ok and honest_in.ok and honest_out.ok and chain.balance_of(alice.address) == 100
    ok = unguarded_loses and denial == "validator.ecf" and post == pre and honest
    verdict(5, "re-entrancy case study", ok,
            f"unguarded attacker balance {drained} > {Attacker.DEPOSIT}, guarded request -> {denial}, "
            f"bank unchanged={post == pre}, honest withdraw ok={honest}", limit=5)


def test_criterion_06_nversion_case_study(verdict, ts_key, alice):
    chain = Chain(clock=1_000)
    main = chain.register_contract(LedgerHead, label="head0", guard_pk=ts_key.pk)
    alt = chain.register_contract(AltLedgerHead, label="head1")
    twin = chain.register_contract(LedgerHead, label="head2")
    buggy = chain.register_contract(BuggyLedgerHead, label="buggy")
    entry = ContractEntry(main, LedgerHead.method_names(), heads=[main, alt, buggy])
    svc = TokenService(ts_key, open_rules(alice.address, methods=["deposit"], args=["amount"],
                                          validators=["nversion"]),
                       {main: entry}, clock=chain.now, sim=lambda: chain)
    req = TokenRequest(TokenType.ARGUMENT, main, alice.address, LedgerHead.selector("deposit"),
                       (ArgPair("amount", "5"),))
    try:
        svc.handle_token_request(req)
        divergent = "issued"
    except Denied as exc:
        divergent = exc.reason
    entry.heads = [main, alt, twin]
    agreed = svc.handle_token_request(req).token
    agreed_ok = verify_token_for_request(svc.pubkey, agreed, req)
    verdict(6, "N-version case study", divergent == "validator.nversion" and agreed_ok,
            f"divergent heads -> {divergent}, identical heads -> token", limit=5)


def test_criterion_07_throughput_shape(verdict):
    started = time.perf_counter()
    fx = bench_fixture()
    try:
        rows = bench_throughput(fx.service, fx.requests, batch_sizes=BATCH_SIZES)
    finally:
        fx.tmpdir.cleanup()
    shape = check_shape(rows, slack=0.10, floor=48)
    top = {r.type: round(r.req_per_s) for r in rows if r.batch == max(BATCH_SIZES)}
    elapsed = time.perf_counter() - started
    verdict(7, "throughput shape", all(shape.values()),
            f"req/s at 1e5 {top}, {shape}, {elapsed:.0f}s", limit=300)


def test_criterion_08_cost_linearity(verdict, ts_key, alice):
    costs = {}
    ok = True
    for k in range(1, 5):
        chain = Chain(clock=1_000)
        links = call_chain_fixture(chain, k, guard_pk=ts_key.pk, bitmap_bits=64)
        svc = service_for(chain, ts_key, links, open_rules(alice.address, methods=["ping"], args=["note"]),
                          one_time=True)
        hops = [Hop(c, "ping", (ArgPair("note", "hi"),), TokenType.ARGUMENT) for c in links]
        receipt = client_request_and_send(LocalTokenClient(svc), chain, alice, hops)
        ok &= receipt.ok and receipt.cost.sig_verifies == k and receipt.cost.storage_writes == k
        costs[k] = receipt.cost
    base = costs[1].units()
    ratios = {k: c.units() / (k * base) for k, c in costs.items()}
    raw = {k: (c.sig_verifies + c.storage_writes + c.bytes_parsed)
           / (k * (costs[1].sig_verifies + costs[1].storage_writes + costs[1].bytes_parsed))
           for k, c in costs.items()}
    ok &= all(abs(r - 1) <= 0.15 for r in ratios.values())
    verdict(8, "guard cost linear in chain depth", ok,
            "units ratio " + ", ".join(f"k={k}:{r:.3f}" for k, r in ratios.items())
            + "; unweighted counter sum " + ", ".join(f"k={k}:{r:.3f}" for k, r in raw.items()),
            limit=10)


METHODS = {method_id(f"m{j}(string)"): f"m{j}" for j in range(6)}
SELECTORS = list(METHODS)


def _random_request(rng, contracts, senders):
    ttype = rng.choice(list(TokenType))
    selector = None if ttype is TokenType.SUPER else rng.choice(SELECTORS)
    args = ()
    if ttype is TokenType.ARGUMENT:
        args = tuple(ArgPair(f"a{j}", "".join(rng.choice("xyz019\u00e9") for _ in range(rng.randint(0, 12))))
                     for j in range(rng.randint(1, 4)))
    return TokenRequest(ttype, rng.choice(contracts), rng.choice(senders), selector, args)


def test_criterion_09_codec_and_binding(verdict, ts_key):
    rng = random.Random(9)
    bad_codec = 0
    for _ in range(10_000):
        tk = Token(rng.choice(list(TokenType)), rng.getrandbits(32),
                   rng.randint(-(2 ** 127), 2 ** 127 - 1), rng.randbytes(65))
        raw = encode_token(tk)
        bad_codec += len(raw) != 86 or decode_token(raw) != tk or encode_token(decode_token(raw)) != raw

    contracts = [keygen(f"c{j}".encode()).address for j in range(4)]
    senders = [keygen(f"s{j}".encode()).address for j in range(5)]
    registry = {c: ContractEntry(c, METHODS, one_time=(j % 2 == 0)) for j, c in enumerate(contracts)}
    rules = open_rules(*senders, methods=METHODS.values(), args=[f"a{j}" for j in range(4)])
    svc = TokenService(ts_key, rules, registry, clock=lambda: 1_000)
    bad_e2e = 0
    types_seen = set()
    for _ in range(1_000):
        req = _random_request(rng, contracts, senders)
        types_seen.add(req.type)
        token = svc.handle_token_request(req).token
        bad_e2e += not verify_token_for_request(svc.pubkey, token, req)
    ok = bad_codec == 0 and bad_e2e == 0 and types_seen == set(TokenType)
    verdict(9, "token codec and binding", ok,
            f"10000 round-trips ({bad_codec} bad), 1000 issue->verify ({bad_e2e} failures)", limit=30)


def test_criterion_10_bitmap_sizing(verdict):
    started = time.perf_counter()
    big, small = required_bits(3600, 35), required_bits(3600, 0.35)
    kb = round(bits_to_kb(big), 2)
    elapsed = time.perf_counter() - started
    verdict(10, "bitmap sizing", (big, small, kb) == (126_000, 1_260, 15.38) and elapsed < 1e-3,
            f"{big} bits = {kb} KB, {small} bits, {elapsed * 1e6:.0f} us")
