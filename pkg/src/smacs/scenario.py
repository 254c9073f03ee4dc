"""Replayable end-to-end scenarios written in a small JSON language.

A scenario builds a fresh chain and TS from ``genesis`` and then runs
``steps`` in order. Strings of the form ``$name`` expand to the hex address of
a named account or contract anywhere inside a step or the genesis rules.

Step ops::

    token    request one token, optionally save it; expect ok|denied
    send     sign and submit a transaction carrying saved tokens
    call     fetch tokens for every hop and send (the client flow)
    replay   resubmit the transaction saved under a name
    advance / setTime   move the chain clock
    rules    owner add/remove on the TS rule set
    mark     remember the current state digest
    assert   balance / storage / bitmap / state checks
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .chain import CODE_REGISTRY, Chain
from .client import Hop, LocalTokenClient, fetch_tokens
from .errors import ChainError, Denied, ParseError, SmacsError
from .rules import RuleStore, rules_from_json
from .service import ContractEntry, TokenService
from .token_core import (
    ArgPair,
    KeyPair,
    TokenRequest,
    TokenType,
    encode_token_array,
    hex_address,
    keygen,
)

STEP_OPS = {"token", "send", "call", "replay", "advance", "setTime", "rules", "mark", "assert"}
COMPARATORS = {
    "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
    "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b,
    "lt": lambda a, b: a < b, "le": lambda a, b: a <= b,
}


@dataclass
class StepResult:
    index: int
    op: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    results: list[StepResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.results)

    def summary(self) -> str:
        lines = [f"scenario {self.name}: {'PASS' if self.passed else 'FAIL'}"]
        for r in self.results:
            mark = "ok " if r.ok else "BAD"
            lines.append(f"  [{mark}] {r.index:>2} {r.op:<8} {r.detail}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "steps": [vars(r) for r in self.results]}


@dataclass
class Scenario:
    name: str
    genesis: dict
    steps: list[dict]

    @classmethod
    def from_json(cls, doc: Any) -> "Scenario":
        if not isinstance(doc, dict):
            raise ParseError("scenario must be a JSON object")
        extra = set(doc) - {"name", "description", "genesis", "steps"}
        if extra:
            raise ParseError(f"unknown scenario keys {sorted(extra)}")
        steps = doc.get("steps", [])
        if not isinstance(steps, list):
            raise ParseError("steps must be a list")
        for k, step in enumerate(steps):
            if not isinstance(step, dict) or step.get("op") not in STEP_OPS:
                raise ParseError(f"step {k}: op must be one of {sorted(STEP_OPS)}")
        genesis = doc.get("genesis", {})
        if not isinstance(genesis, dict):
            raise ParseError("genesis must be an object")
        return cls(str(doc.get("name", "unnamed")), genesis, steps)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_json(doc)


class _World:
    """Chain, TS and name bindings for one scenario run."""

    def __init__(self, genesis: dict):
        self.names: dict[str, bytes] = {}
        self.keys: dict[str, KeyPair] = {}
        self.tokens: dict[str, Any] = {}
        self.txs: dict[str, Any] = {}
        self.marks: dict[str, str] = {}
        self.chain = Chain(clock=int(genesis.get("clock", 0)))
        self.ts_key = keygen(str(genesis.get("tsSeed", "scenario-ts")).encode())

        for name, acct in genesis.get("accounts", {}).items():
            key = keygen(str(acct.get("seed", name)).encode())
            self.keys[name] = key
            self.names[name] = key.address
            self.chain.fund(key.address, int(acct.get("balance", 0)))

        registry = {}
        for spec in genesis.get("contracts", []):
            name = spec["name"]
            code = spec.get("code", "")
            if code not in CODE_REGISTRY:
                raise ParseError(f"contract {name}: unknown code {code!r}")
            guarded = bool(spec.get("guarded", False))
            params = {k: self.expand(v) for k, v in spec.get("params", {}).items()}
            creator = self.names.get(spec["creator"]) if "creator" in spec else None
            addr = self.chain.register_contract(
                code, label=spec.get("label", name), creator=creator,
                guard_pk=self.ts_key.pk if guarded else None,
                bitmap_bits=spec.get("bitmapBits"), balance=int(spec.get("balance", 0)),
                **params)
            self.names[name] = addr
            if guarded or "ts" in spec:
                ts_doc = dict(spec.get("ts", {}))
                ts_doc.setdefault("code", code)
                ts_doc["heads"] = [hex_address(self.names[h]) for h in ts_doc.get("heads", [])]
                registry[addr] = ContractEntry.from_json(hex_address(addr), ts_doc)

        rules = rules_from_json(self.expand(genesis.get("rules", {})))
        chain = self.chain
        self.service = TokenService(self.ts_key, RuleStore(rules), registry,
                                    clock=chain.now, sim=lambda: chain,
                                    admin_secret="scenario-owner")
        self.client = LocalTokenClient(self.service)

    def expand(self, value):
        if isinstance(value, str) and value.startswith("$"):
            name = value[1:]
            if name not in self.names:
                raise ParseError(f"unknown name {value!r}")
            return hex_address(self.names[name])
        if isinstance(value, list):
            return [self.expand(v) for v in value]
        if isinstance(value, dict):
            return {k: self.expand(v) for k, v in value.items()}
        return value

    def address(self, ref: str) -> bytes:
        name = ref[1:] if ref.startswith("$") else ref
        if name not in self.names:
            raise ParseError(f"unknown name {ref!r}")
        return self.names[name]

    def key(self, name: str) -> KeyPair:
        if name not in self.keys:
            raise ParseError(f"unknown account {name!r}")
        return self.keys[name]

    def args(self, doc) -> list[ArgPair]:
        doc = self.expand(doc or {})
        if isinstance(doc, dict):
            return [ArgPair(k, str(v)) for k, v in doc.items()]
        return [ArgPair(str(k), str(v)) for k, v in doc]


def _expect(outcome: str, reason: str, step: dict) -> tuple[bool, str]:
    want = step.get("expect", "ok")
    ok = outcome == want
    if "reason" in step:
        ok = ok and reason == step["reason"]
    detail = f"{outcome}" + (f" ({reason})" if reason else "")
    if not ok:
        detail += f"; expected {want}" + (f" ({step['reason']})" if "reason" in step else "")
    return ok, detail


def _receipt_outcome(world: _World, receipt, step: dict) -> tuple[bool, str]:
    ok, detail = _expect("ok" if receipt.ok else "reverted", receipt.reason, step)
    if "guardPasses" in step:
        passes = receipt.cost.sig_verifies if receipt.ok else 0
        if passes != step["guardPasses"]:
            ok = False
            detail += f"; guard passes {passes} != {step['guardPasses']}"
    if "returns" in step and receipt.return_value != step["returns"]:
        ok = False
        detail += f"; returned {receipt.return_value!r}"
    return ok, detail


def _op_token(world: _World, step: dict) -> tuple[bool, str]:
    key = world.key(step["as"])
    target = world.address(step["contract"])
    ttype = TokenType.parse(step.get("type", "method"))
    selector = None if ttype is TokenType.SUPER else world.chain.selector(target, step["method"])
    args = tuple(world.args(step.get("args"))) if ttype is TokenType.ARGUMENT else ()
    req = TokenRequest(ttype, target, key.address, selector, args)
    try:
        issued = world.service.handle_token_request(req)
    except Denied as exc:
        return _expect("denied", exc.reason, step)
    if "save" in step:
        world.tokens[step["save"]] = (target, issued.token)
    detail_index = f" index={issued.token.index}" if issued.one_time else ""
    ok, detail = _expect("ok", "", step)
    if "index" in step and issued.token.index != step["index"]:
        ok, detail = False, detail + f"; index {issued.token.index} != {step['index']}"
    return ok, detail + detail_index


def _op_send(world: _World, step: dict) -> tuple[bool, str]:
    key = world.key(step["as"])
    target = world.address(step["to"])
    entries = []
    for name in step.get("tokens", []):
        if name not in world.tokens:
            raise ParseError(f"no saved token {name!r}")
        entries.append(world.tokens[name])
    tx = world.chain.transaction(key, target, step["method"], world.args(step.get("args")),
                                 int(step.get("value", 0)), encode_token_array(entries))
    if "save" in step:
        world.txs[step["save"]] = tx
    return _receipt_outcome(world, world.chain.submit_transaction(tx), step)


def _op_call(world: _World, step: dict) -> tuple[bool, str]:
    key = world.key(step["as"])
    hops = [Hop(world.address(h["contract"]), h["method"], world.args(h.get("args")),
                TokenType.parse(h.get("type", "method"))) for h in step["hops"]]
    try:
        array = fetch_tokens(world.client, world.chain, key, hops)
    except Denied as exc:
        return _expect("denied", exc.reason, step)
    first = hops[0]
    tx = world.chain.transaction(key, first.contract, first.method, first.args,
                                 int(step.get("value", 0)), array)
    if "save" in step:
        world.txs[step["save"]] = tx
    return _receipt_outcome(world, world.chain.submit_transaction(tx), step)


def _op_replay(world: _World, step: dict) -> tuple[bool, str]:
    tx = world.txs[step["tx"]]
    try:
        receipt = world.chain.submit_transaction(tx)
    except ChainError as exc:
        return _expect("rejected", type(exc).__name__, step)
    return _receipt_outcome(world, receipt, step)


def _op_rules(world: _World, step: dict) -> tuple[bool, str]:
    version = world.service.admin_update_rules(
        "scenario-owner", step["action"], step["scope"], world.expand(step["entry"]))
    return True, f"{step['action']} {step['scope']} -> version {version}"


def _compare(actual, step: dict, what: str) -> tuple[bool, str]:
    for name, fn in COMPARATORS.items():
        if name in step:
            expected = step[name]
            ok = fn(actual, expected)
            return ok, f"{what} = {actual!r} {name} {expected!r}"
    raise ParseError(f"assert on {what} needs one of {sorted(COMPARATORS)}")


def _op_assert(world: _World, step: dict) -> tuple[bool, str]:
    if "balance" in step:
        return _compare(world.chain.balance_of(world.address(step["balance"])), step,
                        f"balance({step['balance']})")
    if "storage" in step:
        inst = world.chain.contract(world.address(step["storage"]))
        key = world.expand(step["key"])
        if isinstance(key, str) and ":" in key:
            head, _, tail = key.partition(":")
            key = f"{head}:{world.expand(tail)}"
        return _compare(inst.storage.get(key), step, f"{step['storage']}[{key}]")
    if "bitmap" in step:
        guard = world.chain.contract(world.address(step["bitmap"])).guard
        window = list(guard.bitmap.window()) if guard and guard.bitmap else None
        return _compare(window, step, f"window({step['bitmap']})")
    if "sameState" in step:
        now = world.chain.state_digest()
        then = world.marks[step["sameState"]]
        return now == then, f"state digest {'unchanged' if now == then else 'changed'} since {step['sameState']}"
    if "supply" in step:
        return _compare(world.chain.total_supply(), step, "total supply")
    raise ParseError(f"assert step needs balance, storage, bitmap, sameState or supply: {step}")


def _op_mark(world: _World, step: dict) -> tuple[bool, str]:
    world.marks[step["name"]] = world.chain.state_digest()
    return True, f"marked {step['name']}"


def _op_advance(world: _World, step: dict) -> tuple[bool, str]:
    world.chain.advance(int(step["seconds"]))
    return True, f"clock -> {world.chain.now()}"


def _op_set_time(world: _World, step: dict) -> tuple[bool, str]:
    world.chain.set_time(int(step["t"]))
    return True, f"clock -> {world.chain.now()}"


HANDLERS = {
    "token": _op_token, "send": _op_send, "call": _op_call, "replay": _op_replay,
    "rules": _op_rules, "assert": _op_assert, "mark": _op_mark,
    "advance": _op_advance, "setTime": _op_set_time,
}


def run_scenario(scenario: Scenario | str | Path | dict) -> ScenarioReport:
    """Execute against a fresh chain and TS; every step yields a StepResult."""
    if isinstance(scenario, dict):
        scenario = Scenario.from_json(scenario)
    elif not isinstance(scenario, Scenario):
        scenario = Scenario.load(scenario)
    world = _World(scenario.genesis)
    report = ScenarioReport(scenario.name)
    for k, step in enumerate(scenario.steps):
        op = step["op"]
        try:
            ok, detail = HANDLERS[op](world, step)
        except ParseError:
            raise
        except (KeyError, SmacsError) as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        report.results.append(StepResult(k, op, ok, detail))
    return report


def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("smacs") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def resolve_scenario(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.exists():
        return path
    shipped = shipped_scenarios()
    if name_or_path in shipped:
        return shipped[name_or_path]
    raise ParseError(f"no scenario file or shipped scenario named {name_or_path!r}")
