"""``smacs`` command line.

    smacs ts serve --config ts.json
    smacs owner rules add|remove --url URL --secret S --scope SCOPE --entry E
    smacs owner rules put --url URL --secret S rules.json
    smacs client token --url URL --key KEY --contract ADDR --type method --method-sig 'f()'
    smacs client send --url URL --state chain.json --key KEY --hop ADDR:method[:type] ...
    smacs sim init --out chain.json --fixture bank|chain3|counter --ts-pubkey HEX
    smacs sim dump --state chain.json
    smacs bench --out DIR
    smacs scenario run NAME_OR_PATH

Exit codes: 0 ok, 1 denied/reverted/assertion failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .errors import ChainError, Denied, ParseError, ShapeMismatch, SmacsError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _load_key(value: str):
    from .token_core import KeyPair
    path = Path(value)
    if path.exists():
        doc = json.loads(path.read_text())
        return KeyPair.from_hex(doc["sk"] if isinstance(doc, dict) else doc)
    return KeyPair.from_hex(value)


def _parse_args(pairs):
    from .token_core import ArgPair
    out = []
    for item in pairs or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ParseError(f"argument must look like name=value, got {item!r}")
        out.append(ArgPair(name, value))
    return out


# -- ts ----------------------------------------------------------------------


def cmd_ts_serve(ns) -> int:
    import uvicorn

    from .http_api import create_app
    from .service import ServiceConfig

    config = ServiceConfig.load(ns.config)
    host, _, port = (ns.listen or config.listen).rpartition(":")
    uvicorn.run(create_app(config.build()), host=host or "127.0.0.1", port=int(port),
                log_level="info")
    return EXIT_OK


# -- owner -------------------------------------------------------------------


def _owner_client(ns) -> httpx.Client:
    return httpx.Client(base_url=ns.url, timeout=10.0,
                        headers={"authorization": f"Bearer {ns.secret}"})


def cmd_owner_rules(ns) -> int:
    with _owner_client(ns) as http:
        if ns.action == "put":
            doc = json.loads(Path(ns.document).read_text())
            resp = http.put("/v1/rules", json=doc)
        else:
            resp = http.patch("/v1/rules", json={"op": ns.action, "scope": ns.scope,
                                                 "entry": ns.entry})
    _print(resp.json())
    if resp.status_code == 200:
        return EXIT_OK
    return EXIT_USAGE if resp.status_code in (400, 404) else EXIT_FAIL


# -- client ------------------------------------------------------------------


def cmd_client_token(ns) -> int:
    from .client import HttpTokenClient
    from .token_core import TokenRequest, TokenType, encode_token, method_id, to_address

    key = _load_key(ns.key)
    ttype = TokenType.parse(ns.type)
    selector = None
    if ns.selector:
        selector = bytes.fromhex(ns.selector.removeprefix("0x"))
    elif ns.method_sig:
        selector = method_id(ns.method_sig)
    req = TokenRequest(ttype, to_address(ns.contract), key.address, selector,
                       tuple(_parse_args(ns.arg)))
    client = HttpTokenClient(ns.url)
    token = client.request_token(req)
    _print({"token": encode_token(token).hex(), "expiresAt": token.expire,
            "index": token.index, "oneTime": token.one_time})
    return EXIT_OK


def _parse_hop(text: str, args):
    from .client import Hop
    from .token_core import TokenType, to_address

    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ParseError(f"hop must look like ADDR:method[:type], got {text!r}")
    ttype = TokenType.parse(parts[2]) if len(parts) == 3 else TokenType.METHOD
    return Hop(to_address(parts[0]), parts[1], args, ttype)


def cmd_client_send(ns) -> int:
    from .chain import Chain
    from .client import HttpTokenClient, client_request_and_send

    key = _load_key(ns.key)
    state_path = Path(ns.state)
    chain = Chain.from_dict(json.loads(state_path.read_text()))
    if ns.time is not None:
        chain.set_time(ns.time)
    args = _parse_args(ns.arg)
    hops = [_parse_hop(h, args) for h in ns.hop]
    receipt = client_request_and_send(HttpTokenClient(ns.url), chain, key, hops, ns.value)
    state_path.write_text(json.dumps(chain.to_dict(), indent=2))
    _print(receipt.to_dict())
    return EXIT_OK if receipt.ok else EXIT_FAIL


# -- sim ---------------------------------------------------------------------


def cmd_sim_init(ns) -> int:
    from .chain import Chain, Counter, bank_attacker_fixture, call_chain_fixture
    from .token_core import hex_address, keygen

    chain = Chain(clock=ns.clock)
    pk = bytes.fromhex(ns.ts_pubkey) if ns.ts_pubkey else None
    named: dict[str, bytes] = {}
    if ns.fixture == "bank":
        attacker = keygen(b"cli-attacker")
        named = bank_attacker_fixture(chain, attacker_key=attacker, guard_pk=pk,
                                      bitmap_bits=ns.bitmap_bits)
    elif ns.fixture == "chain3":
        links = call_chain_fixture(chain, 3, guard_pk=pk, bitmap_bits=ns.bitmap_bits)
        named = dict(zip(("SC_A", "SC_B", "SC_C"), links))
    elif ns.fixture == "counter":
        named = {"counter": chain.register_contract(Counter, label="counter", guard_pk=pk,
                                                    bitmap_bits=ns.bitmap_bits)}
    for spec in ns.fund or []:
        addr, _, amount = spec.partition("=")
        from .token_core import to_address
        chain.fund(to_address(addr), int(amount))
    Path(ns.out).write_text(json.dumps(chain.to_dict(), indent=2))
    _print({name: hex_address(a) for name, a in named.items()})
    return EXIT_OK


def cmd_sim_dump(ns) -> int:
    from .chain import Chain

    chain = Chain.from_dict(json.loads(Path(ns.state).read_text()))
    doc = chain.to_dict()
    doc["stateDigest"] = chain.state_digest()
    _print(doc)
    return EXIT_OK


# -- bench / scenario --------------------------------------------------------


def cmd_bench(ns) -> int:
    from .bench import BATCH_SIZES, BENCH_TYPES, run_bench

    batches = [int(b) for b in ns.batches.split(",")] if ns.batches else list(BATCH_SIZES)
    types = ns.types.split(",") if ns.types else list(BENCH_TYPES)
    doc = run_bench(ns.out, batches, types, ns.concurrency, with_validators=not ns.no_validators)
    sys.stdout.write(doc["csv"])
    if "validatorLatencyMs" in doc:
        for name, ms in doc["validatorLatencyMs"].items():
            print(f"# validator {name}: {ms:.3f} ms median")
    print("# shape " + " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in doc["shape"].items()))
    return EXIT_OK


def cmd_scenario_run(ns) -> int:
    from .scenario import resolve_scenario, run_scenario, shipped_scenarios

    targets = sorted(shipped_scenarios()) if ns.all else ns.scenario
    if not targets:
        raise ParseError("name a scenario or pass --all")
    failed = False
    reports = []
    for target in targets:
        report = run_scenario(resolve_scenario(target))
        reports.append(report.to_json())
        failed |= not report.passed
        if not ns.json:
            print(report.summary())
    if ns.json:
        _print(reports)
    return EXIT_FAIL if failed else EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smacs", description="Token-based smart contract access control")
    sub = p.add_subparsers(dest="group", required=True)

    ts = sub.add_parser("ts", help="token service").add_subparsers(dest="verb", required=True)
    serve = ts.add_parser("serve", help="run the HTTP token service")
    serve.add_argument("--config", required=True)
    serve.add_argument("--listen", help="host:port, overrides the config file")
    serve.set_defaults(func=cmd_ts_serve)

    owner = sub.add_parser("owner", help="owner administration").add_subparsers(dest="verb", required=True)
    rules = owner.add_parser("rules", help="edit the TS rule set")
    rules.add_argument("action", choices=["add", "remove", "put"])
    rules.add_argument("document", nargs="?", help="rule file for put")
    rules.add_argument("--url", required=True)
    rules.add_argument("--secret", required=True)
    rules.add_argument("--scope")
    rules.add_argument("--entry")
    rules.set_defaults(func=cmd_owner_rules)

    client = sub.add_parser("client", help="client operations").add_subparsers(dest="verb", required=True)
    tok = client.add_parser("token", help="request one token")
    tok.add_argument("--url", required=True)
    tok.add_argument("--key", required=True, help="hex secret key or key file")
    tok.add_argument("--contract", required=True)
    tok.add_argument("--type", default="method", choices=["super", "method", "argument"])
    tok.add_argument("--method-sig", help="e.g. 'withdraw(address)'")
    tok.add_argument("--selector", help="4-byte hex selector")
    tok.add_argument("--arg", action="append", help="name=value, repeatable")
    tok.set_defaults(func=cmd_client_token)
    send = client.add_parser("send", help="fetch tokens for each hop and submit a transaction")
    send.add_argument("--url", required=True)
    send.add_argument("--state", required=True, help="chain state file, updated in place")
    send.add_argument("--key", required=True)
    send.add_argument("--hop", action="append", required=True, help="ADDR:method[:type], in call order")
    send.add_argument("--arg", action="append", help="name=value for the top-level call")
    send.add_argument("--value", type=int, default=0)
    send.add_argument("--time", type=int, help="move the chain clock before sending")
    send.set_defaults(func=cmd_client_send)

    sim = sub.add_parser("sim", help="chain simulator state").add_subparsers(dest="verb", required=True)
    init = sim.add_parser("init", help="write a fresh chain with a fixture deployed")
    init.add_argument("--out", required=True)
    init.add_argument("--fixture", choices=["none", "bank", "chain3", "counter"], default="none")
    init.add_argument("--ts-pubkey", help="guard deployed contracts with this TS key")
    init.add_argument("--bitmap-bits", type=int)
    init.add_argument("--clock", type=int, default=0)
    init.add_argument("--fund", action="append", help="ADDR=amount, repeatable")
    init.set_defaults(func=cmd_sim_init)
    dump = sim.add_parser("dump", help="print a chain state file")
    dump.add_argument("--state", required=True)
    dump.set_defaults(func=cmd_sim_dump)

    bench = sub.add_parser("bench", help="TS throughput benchmark")
    bench.add_argument("--out", help="directory for throughput.csv and throughput.json")
    bench.add_argument("--batches", help="comma-separated batch sizes")
    bench.add_argument("--types", help="comma-separated token types")
    bench.add_argument("--concurrency", type=int, default=4)
    bench.add_argument("--no-validators", action="store_true")
    bench.set_defaults(func=cmd_bench)

    scen = sub.add_parser("scenario", help="scenario runner").add_subparsers(dest="verb", required=True)
    run = scen.add_parser("run", help="run scenario files or shipped scenario names")
    run.add_argument("scenario", nargs="*")
    run.add_argument("--all", action="store_true", help="run every shipped scenario")
    run.add_argument("--json", action="store_true")
    run.set_defaults(func=cmd_scenario_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.group == "owner" and ns.action != "put" and (not ns.scope or not ns.entry):
        parser.error("add/remove need --scope and --entry")
    if ns.group == "owner" and ns.action == "put" and not ns.document:
        parser.error("put needs a rule document")
    try:
        return ns.func(ns)
    except (Denied, ChainError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ParseError, ShapeMismatch, ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SmacsError, httpx.HTTPError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
