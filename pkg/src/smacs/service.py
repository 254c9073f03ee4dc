"""The Token Service: rules, validators and signing behind one entry point.

``TokenService.handle_token_request`` runs the issuance pipeline::

    shape check -> contract registry -> list rules -> validators
        -> expiry -> one-time index -> signature

Denials expose only the failing scope name.
"""

from __future__ import annotations

import hmac
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .chain.contracts import CODE_REGISTRY
from .chain.sim import Chain
from .errors import Denied, PersistenceFailure, ShapeMismatch, SmacsError, Unauthorized
from .rules import Decision, RuleSet, RuleStore, _atomic_write, evaluate
from .token_core import (
    DEFAULT_SCHEME,
    NO_INDEX,
    KeyPair,
    SignatureScheme,
    Token,
    TokenRequest,
    TokenType,
    encode_req_payload,
    encode_token,
    method_id,
    signing_payload,
    to_address,
)
from .validators import REGISTRY, LatencyStats, ValidatorEnv

log = logging.getLogger(__name__)

DEFAULT_EXPIRY_SECONDS = 3600
ALL_TYPES = frozenset(TokenType)


@dataclass(frozen=True)
class MethodPolicy:
    one_time: bool | None = None
    expiry_seconds: int | None = None
    allowed_types: frozenset[TokenType] | None = None
    caller_arg: str | None = None


@dataclass
class ContractEntry:
    """Owner configuration for one protected contract."""

    address: bytes
    methods: dict[bytes, str] = field(default_factory=dict)
    default_expiry: int = DEFAULT_EXPIRY_SECONDS
    one_time: bool = False
    allowed_types: frozenset[TokenType] = ALL_TYPES
    policies: dict[str, MethodPolicy] = field(default_factory=dict)
    heads: list[bytes] = field(default_factory=list)

    def policy(self, req: TokenRequest) -> MethodPolicy:
        if req.method_id is None:
            return MethodPolicy()
        return self.policies.get(self.methods.get(req.method_id, ""), MethodPolicy())

    def lifetime(self, req: TokenRequest) -> int:
        p = self.policy(req)
        return p.expiry_seconds if p.expiry_seconds is not None else self.default_expiry

    def is_one_time(self, req: TokenRequest) -> bool:
        p = self.policy(req)
        return p.one_time if p.one_time is not None else self.one_time

    def admits_type(self, req: TokenRequest) -> bool:
        p = self.policy(req)
        allowed = p.allowed_types if p.allowed_types is not None else self.allowed_types
        return req.type in allowed

    @classmethod
    def from_json(cls, address: str, doc: Mapping) -> "ContractEntry":
        methods: dict[bytes, str] = {}
        if "code" in doc:
            methods.update(CODE_REGISTRY[doc["code"]].method_names())
        for name, signature in doc.get("methods", {}).items():
            methods[method_id(signature)] = name
        policies = {
            name: MethodPolicy(
                p.get("oneTime"), p.get("expirySeconds"),
                _types(p["allowedTypes"]) if "allowedTypes" in p else None,
                p.get("callerArg"))
            for name, p in doc.get("methodPolicy", {}).items()
        }
        return cls(
            to_address(address), methods,
            int(doc.get("defaultExpirySeconds", DEFAULT_EXPIRY_SECONDS)),
            bool(doc.get("oneTime", False)),
            _types(doc["allowedTypes"]) if "allowedTypes" in doc else ALL_TYPES,
            policies,
            [to_address(h) for h in doc.get("heads", [])],
        )


def _types(names: Iterable) -> frozenset[TokenType]:
    return frozenset(TokenType.parse(n) for n in names)


class CounterStore:
    """One-time index counter, persisted before any index is handed out."""

    def __init__(self, path: str | Path | None = None, value: int = 0):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            value = int(json.loads(self.path.read_text())["counter"])
        self._value = value

    @property
    def value(self) -> int:
        return self._value

    def _persist(self, value: int) -> None:
        if self.path is None:
            return
        try:
            _atomic_write(self.path, json.dumps({"counter": value}))
        except OSError as exc:
            raise PersistenceFailure(f"cannot persist counter: {exc}") from exc

    def reserve(self, k: int = 1) -> range:
        """Claim ``k`` consecutive indexes; the counter starts at 0, first index is 1."""
        with self._lock:
            first = self._value + 1
            self._persist(self._value + k)
            self._value += k
            return range(first, first + k)

    def next(self) -> int:
        return self.reserve(1)[0]


@dataclass(frozen=True)
class IssueResponse:
    token: Token
    expires_at: int
    one_time: bool

    def to_json(self) -> dict:
        return {"token": encode_token(self.token).hex(), "expiresAt": self.expires_at,
                "oneTime": self.one_time}


@dataclass(frozen=True)
class AuditRecord:
    request: TokenRequest
    version: int
    allowed: bool
    reason: str
    index: int = NO_INDEX


class TokenService:
    def __init__(self, keypair: KeyPair, rules: RuleStore | RuleSet | None = None,
                 registry: Mapping[bytes, ContractEntry] | None = None, *,
                 clock: Callable[[], int] | None = None, counter: CounterStore | None = None,
                 sim: Callable[[], Chain] | None = None, admin_secret: str | None = None,
                 scheme: SignatureScheme = DEFAULT_SCHEME, audit: bool = False):
        self.keypair = keypair
        self.rules = rules if isinstance(rules, RuleStore) else RuleStore(rules)
        self.registry = dict(registry or {})
        self.clock = clock or (lambda: int(time.time()))
        self.counter = counter or CounterStore()
        self.sim = sim
        self.admin_secret = admin_secret
        self.scheme = scheme
        self.latency = LatencyStats()
        self.audit: list[AuditRecord] | None = [] if audit else None
        self._audit_lock = threading.Lock()
        self.last_verdicts: dict[str, str] = {}

    @property
    def pubkey(self) -> bytes:
        return self.keypair.pk

    def validator_env(self) -> ValidatorEnv | None:
        if self.sim is None:
            return None
        heads = {a: e.heads for a, e in self.registry.items() if e.heads}
        callers = {}
        for addr, entry in self.registry.items():
            for sel, name in entry.methods.items():
                policy = entry.policies.get(name)
                if policy is not None and policy.caller_arg:
                    callers[(addr, sel)] = policy.caller_arg
        return ValidatorEnv(self.sim, heads, callers)

    def _validator_hook(self):
        def run(req: TokenRequest, rs: RuleSet) -> str | None:
            env = self.validator_env()
            for name in rs.validators:
                if env is None:
                    self.last_verdicts[name] = "no simulator configured"
                    return name
                verdict = REGISTRY[name](req, env)
                self.latency.record(name, verdict.elapsed)
                if not verdict.passed:
                    self.last_verdicts[name] = verdict.detail
                    log.info("validator %s denied request: %s", name, verdict.detail)
                    return name
            return None

        return run

    def decide(self, req: TokenRequest, rs: RuleSet | None = None) -> Decision:
        """Registry and rule checks for a shape-valid request, against one snapshot."""
        rs = rs if rs is not None else self.rules.current
        entry = self.registry.get(req.c_addr)
        if entry is None:
            return Decision(False, "registry.contract", rs.version)
        if not entry.admits_type(req):
            return Decision(False, "registry.type", rs.version)
        return evaluate(req, rs, entry.methods, self._validator_hook())

    def _sign(self, req: TokenRequest, expire: int, index: int) -> Token:
        payload = signing_payload(req.type, expire, index, encode_req_payload(req))
        try:
            signature = self.scheme.sign(self.keypair.sk, payload)
        except Exception as exc:
            raise SmacsError(f"signing failed: {exc}") from exc
        return Token(req.type, expire, index, signature)

    def _record(self, req, version, allowed, reason, index=NO_INDEX):
        if self.audit is not None:
            with self._audit_lock:
                self.audit.append(AuditRecord(req, version, allowed, reason, index))

    def handle_token_request(self, req: TokenRequest) -> IssueResponse:
        """Issue a token or raise ShapeMismatch / Denied."""
        req.validate()
        rs = self.rules.current
        decision = self.decide(req, rs)
        if not decision.allow:
            self._record(req, decision.version, False, decision.reason)
            raise Denied(decision.reason)
        entry = self.registry[req.c_addr]
        expire = self.clock() + entry.lifetime(req)
        one_time = entry.is_one_time(req)
        index = self.counter.next() if one_time else NO_INDEX
        token = self._sign(req, expire, index)
        self._record(req, decision.version, True, "ok", index)
        return IssueResponse(token, expire, one_time)

    def issue_batch(self, reqs: Sequence[TokenRequest]) -> list[IssueResponse | Denied | ShapeMismatch]:
        """Evaluate a batch against one snapshot, reserving one-time indexes in one write."""
        rs = self.rules.current
        now = self.clock()
        results: list = []
        granted = []
        for req in reqs:
            try:
                req.validate()
            except ShapeMismatch as exc:
                results.append(exc)
                continue
            decision = self.decide(req, rs)
            if not decision.allow:
                self._record(req, decision.version, False, decision.reason)
                results.append(Denied(decision.reason))
                continue
            results.append(None)
            granted.append((len(results) - 1, req))
        one_time = [(pos, req) for pos, req in granted
                    if self.registry[req.c_addr].is_one_time(req)]
        indexes = iter(self.counter.reserve(len(one_time)) if one_time else ())
        one_time_pos = {pos for pos, _ in one_time}
        for pos, req in granted:
            entry = self.registry[req.c_addr]
            index = next(indexes) if pos in one_time_pos else NO_INDEX
            expire = now + entry.lifetime(req)
            results[pos] = IssueResponse(self._sign(req, expire, index), expire, index >= 0)
            self._record(req, rs.version, True, "ok", index)
        return results

    def next_counter(self) -> int:
        return self.counter.next()

    # -- owner administration -------------------------------------------------

    def authenticate(self, secret: str | None) -> None:
        if not self.admin_secret or secret is None or not hmac.compare_digest(
                secret.encode(), self.admin_secret.encode()):
            raise Unauthorized("owner credential required")

    def admin_update_rules(self, secret: str | None, op: str, scope: str, entry: str) -> int:
        self.authenticate(secret)
        return self.rules.update(op, scope, entry).version

    def admin_replace_rules(self, secret: str | None, doc: dict) -> int:
        self.authenticate(secret)
        return self.rules.replace(doc).version


# -- configuration -------------------------------------------------------------


@dataclass
class ServiceConfig:
    key: KeyPair
    rules_path: Path | None
    counter_path: Path | None
    admin_secret: str | None
    listen: str
    sim_state: Path | None
    contracts: dict[bytes, ContractEntry]

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        doc = json.loads(path.read_text())
        base = path.parent

        def rel(p):
            return None if p is None else (base / p if not os.path.isabs(p) else Path(p))

        return cls(
            KeyPair.from_hex(doc["key"]["sk"]),
            rel(doc.get("rulesPath")),
            rel(doc.get("counterPath")),
            doc.get("adminSecret"),
            doc.get("listen", "127.0.0.1:8545"),
            rel(doc.get("simState")),
            {to_address(a): ContractEntry.from_json(a, e) for a, e in doc.get("contracts", {}).items()},
        )

    def build(self) -> TokenService:
        rules = RuleStore(path=self.rules_path)
        sim = None
        if self.sim_state is not None:
            base = Chain.from_dict(json.loads(self.sim_state.read_text()))
            sim = lambda: base
        return TokenService(self.key, rules, self.contracts, counter=CounterStore(self.counter_path),
                            sim=sim, admin_secret=self.admin_secret)


def service_from_config(path: str | Path) -> TokenService:
    return ServiceConfig.load(path).build()


__all__ = [
    "AuditRecord", "ContractEntry", "CounterStore", "IssueResponse", "MethodPolicy",
    "ServiceConfig", "TokenService", "service_from_config",
]
