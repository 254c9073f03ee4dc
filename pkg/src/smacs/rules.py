"""Whitelist/blacklist access control rules and their evaluation.

A rule document looks like::

    {
      "sender":   {"whitelist": ["0x366c..."]},
      "method":   {"methodA": {"blacklist": ["0xba7f..."]}},
      "argument": {"argA": {"whitelist": ["0x3540..."]}},
      "validators": ["ecf"]
    }

Evaluation is default-deny: every scope a request touches must exist and
admit it. Denials carry only the failing scope path, never list contents.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping

from .errors import BothListsInOneScope, NoSuchScope, ParseError, UnknownValidator
from .token_core import TokenRequest, TokenType, hex_address, is_hex_address

WHITELIST = "whitelist"
BLACKLIST = "blacklist"
MODES = (WHITELIST, BLACKLIST)
DEFAULT_VALIDATORS = ("nversion", "ecf")


def canonical_entry(value: str) -> str:
    return value.lower() if is_hex_address(value) else value


@dataclass(frozen=True)
class ListRule:
    mode: str
    entries: frozenset[str] = frozenset()

    def admits(self, value: str) -> bool:
        member = canonical_entry(value) in self.entries
        return member if self.mode == WHITELIST else not member

    def to_json(self) -> dict:
        return {self.mode: sorted(self.entries)}


@dataclass(frozen=True)
class Decision:
    allow: bool
    reason: str
    version: int = 0

    @classmethod
    def ok(cls, version: int = 0) -> "Decision":
        return cls(True, "ok", version)


@dataclass(frozen=True)
class RuleSet:
    sender: ListRule | None = None
    method: Mapping[str, ListRule] = field(default_factory=dict)
    argument: Mapping[str, ListRule] = field(default_factory=dict)
    validators: tuple[str, ...] = ()
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", MappingProxyType(dict(self.method)))
        object.__setattr__(self, "argument", MappingProxyType(dict(self.argument)))
        object.__setattr__(self, "validators", tuple(self.validators))

    def to_json(self) -> dict:
        doc: dict = {}
        if self.sender is not None:
            doc["sender"] = self.sender.to_json()
        if self.method:
            doc["method"] = {k: v.to_json() for k, v in sorted(self.method.items())}
        if self.argument:
            doc["argument"] = {k: v.to_json() for k, v in sorted(self.argument.items())}
        if self.validators:
            doc["validators"] = list(self.validators)
        doc["version"] = self.version
        return doc


def _parse_list_rule(path: str, node, addresses_only: bool) -> ListRule:
    if not isinstance(node, dict):
        raise ParseError(f"{path}: expected an object")
    modes = [k for k in node if k in MODES]
    extra = set(node) - set(MODES)
    if extra:
        raise ParseError(f"{path}: unknown keys {sorted(extra)}")
    if len(modes) == 2:
        raise BothListsInOneScope(f"{path} has both a whitelist and a blacklist")
    if not modes:
        raise ParseError(f"{path}: needs a whitelist or a blacklist")
    mode = modes[0]
    items = node[mode]
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        raise ParseError(f"{path}.{mode}: expected a list of strings")
    if addresses_only:
        bad = [x for x in items if not is_hex_address(x)]
        if bad:
            raise ParseError(f"{path}.{mode}: not 0x-prefixed addresses: {bad[:3]}")
    return ListRule(mode, frozenset(canonical_entry(x) for x in items))


def _known_validators(names: Iterable[str] | None) -> frozenset[str]:
    if names is not None:
        return frozenset(names)
    from .validators import REGISTRY
    return frozenset(REGISTRY)


def rules_from_json(doc, validator_names: Iterable[str] | None = None) -> RuleSet:
    if not isinstance(doc, dict):
        raise ParseError("rule document must be a JSON object")
    extra = set(doc) - {"sender", "method", "argument", "validators", "version"}
    if extra:
        raise ParseError(f"unknown top-level keys {sorted(extra)}")
    sender = None
    if "sender" in doc:
        sender = _parse_list_rule("sender", doc["sender"], addresses_only=True)
    scopes = {}
    for section, addresses_only in (("method", True), ("argument", False)):
        node = doc.get(section, {})
        if not isinstance(node, dict):
            raise ParseError(f"{section}: expected an object")
        scopes[section] = {
            name: _parse_list_rule(f"{section}.{name}", sub, addresses_only)
            for name, sub in node.items()
        }
    validators = doc.get("validators", [])
    if not isinstance(validators, list) or not all(isinstance(v, str) for v in validators):
        raise ParseError("validators: expected a list of names")
    known = _known_validators(validator_names)
    for name in validators:
        if name not in known:
            raise UnknownValidator(f"unknown validator {name!r}")
    version = doc.get("version", 0)
    if not isinstance(version, int) or version < 0:
        raise ParseError("version: expected a non-negative integer")
    return RuleSet(sender, scopes["method"], scopes["argument"], tuple(validators), version)


def load_rules(document: str, validator_names: Iterable[str] | None = None) -> RuleSet:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return rules_from_json(doc, validator_names)


def _split_scope(scope: str) -> tuple[str, str | None, str | None]:
    """``sender[.mode]`` / ``method.<name>[.mode]`` / ``argument.<name>[.mode]``."""
    parts = scope.split(".")
    if parts[0] == "sender" and len(parts) in (1, 2):
        return "sender", None, parts[1] if len(parts) == 2 else None
    if parts[0] in ("method", "argument") and len(parts) in (2, 3) and parts[1]:
        return parts[0], parts[1], parts[2] if len(parts) == 3 else None
    raise NoSuchScope(f"bad scope path {scope!r}")


def update_rules(rs: RuleSet, op: str, scope: str, entry: str) -> RuleSet:
    """Add or remove one list entry; returns the next version.

    Adding to an absent scope creates it, which requires the mode in the path
    (``sender.whitelist``). Removing from an absent scope raises NoSuchScope.
    """
    if op not in ("add", "remove"):
        raise ValueError(f"op must be add or remove, got {op!r}")
    section, name, mode = _split_scope(scope)
    if mode is not None and mode not in MODES:
        raise NoSuchScope(f"bad list mode {mode!r}")
    if section != "argument" and not is_hex_address(entry):
        raise ParseError(f"{section} entries must be 0x-prefixed addresses")
    current = rs.sender if section == "sender" else getattr(rs, section).get(name)
    if current is None:
        if op == "remove":
            raise NoSuchScope(f"no rules at {scope!r}")
        if mode is None:
            raise NoSuchScope(f"creating {scope!r} needs an explicit list mode")
        current = ListRule(mode)
    elif mode is not None and mode != current.mode:
        raise BothListsInOneScope(f"{scope!r} already holds a {current.mode}")
    value = canonical_entry(entry)
    entries = current.entries | {value} if op == "add" else current.entries - {value}
    updated = ListRule(current.mode, entries)
    if section == "sender":
        return replace(rs, sender=updated, version=rs.version + 1)
    table = dict(getattr(rs, section))
    table[name] = updated
    return replace(rs, **{section: table}, version=rs.version + 1)


# Hook signature: (request, ruleset) -> None on pass, or the failing validator name.
ValidatorHook = Callable[[TokenRequest, RuleSet], "str | None"]


def evaluate(req: TokenRequest, rs: RuleSet,
             method_names: Mapping[bytes, str] | None = None,
             run_validators: ValidatorHook | None = None) -> Decision:
    """Check ``req`` against ``rs``: sender, method, arguments, then validators.

    ``method_names`` maps selectors to names so rules can be keyed either by
    name (``withdraw``) or by hex selector (``0x2e1a7d4d``).
    """
    v = rs.version
    if rs.sender is None:
        return Decision(False, "sender.missing", v)
    if not rs.sender.admits(hex_address(req.s_addr)):
        return Decision(False, f"sender.{rs.sender.mode}", v)
    if req.type is TokenType.SUPER:
        return Decision.ok(v)

    selector_key = "0x" + req.method_id.hex()
    name = (method_names or {}).get(req.method_id)
    key = name if name is not None and name in rs.method else selector_key
    label = name or selector_key
    rule = rs.method.get(key)
    if rule is None:
        return Decision(False, f"method.{label}.missing", v)
    if not rule.admits(hex_address(req.s_addr)):
        return Decision(False, f"method.{label}.{rule.mode}", v)
    if req.type is TokenType.METHOD:
        return Decision.ok(v)

    for arg in req.args:
        rule = rs.argument.get(arg.name)
        if rule is None:
            return Decision(False, f"argument.{arg.name}.missing", v)
        if not rule.admits(arg.value):
            return Decision(False, f"argument.{arg.name}.{rule.mode}", v)
    if rs.validators and run_validators is not None:
        failed = run_validators(req, rs)
        if failed is not None:
            return Decision(False, f"validator.{failed}", v)
    return Decision.ok(v)


class RuleStore:
    """Current rule snapshot plus its on-disk ``rules.json``.

    Readers grab ``store.current`` once and use that immutable snapshot;
    writers serialize on a lock and swap the reference.
    """

    def __init__(self, rules: RuleSet | None = None, path: str | Path | None = None):
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        if rules is None and self.path is not None and self.path.exists():
            rules = load_rules(self.path.read_text())
        self._current = rules if rules is not None else RuleSet()
        self.history: dict[int, RuleSet] = {self._current.version: self._current}

    @property
    def current(self) -> RuleSet:
        return self._current

    def _commit(self, rs: RuleSet) -> RuleSet:
        if self.path is not None:
            _atomic_write(self.path, json.dumps(rs.to_json(), indent=2, sort_keys=True))
        self.history[rs.version] = rs
        self._current = rs
        return rs

    def update(self, op: str, scope: str, entry: str) -> RuleSet:
        with self._lock:
            return self._commit(update_rules(self._current, op, scope, entry))

    def replace(self, doc: dict) -> RuleSet:
        with self._lock:
            rs = rules_from_json({k: v for k, v in doc.items() if k != "version"})
            return self._commit(replace(rs, version=self._current.version + 1))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
