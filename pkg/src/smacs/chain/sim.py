"""Deterministic single-node ledger with message calls and SMACS guards.

One transaction per block, instant finality. A transaction runs its whole
call chain atomically: any trap or failed guard restores every balance,
storage slot and bitmap, while the origin nonce still advances.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..bitmap import BitmapState, new_bitmap
from ..errors import (
    BadNonce,
    BadSignature,
    ClockRegression,
    CodecError,
    Malformed,
    NonceUsed,
    NotFound,
    Reverted,
    UnknownContract,
)
from ..token_core import (
    ADDRESS_LEN,
    DEFAULT_SCHEME,
    EMPTY_TOKEN_ARRAY,
    TOKEN_LEN,
    ArgPair,
    KeyPair,
    SignatureScheme,
    TokenType,
    address_of,
    decode_args,
    encode_args,
    hex_address,
    keccak256,
    scan_token_array,
    signing_payload,
    to_address,
)
from .contracts import CODE_REGISTRY, FALLBACK_SELECTOR, ContractCode

DEFAULT_MAX_DEPTH = 64
DEFAULT_MAX_STEPS = 10**6

# Operation weights for CostMeter.units(); relative sizes follow the EVM
# schedule (ecrecover 3000, SSTORE update 5000, word-level reads ~3).
SIG_VERIFY_UNITS = 3000
STORAGE_WRITE_UNITS = 5000
BYTE_PARSED_UNITS = 3


@dataclass
class Account:
    balance: int = 0
    nonce: int = 0


@dataclass
class Guard:
    pk: bytes
    bitmap: BitmapState | None = None
    scheme: SignatureScheme = field(default=DEFAULT_SCHEME, compare=False)


@dataclass
class ContractInstance:
    address: bytes
    code: ContractCode
    storage: dict = field(default_factory=dict)
    guard: Guard | None = None
    creator: bytes | None = None
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or type(self.code).__name__


@dataclass
class CostMeter:
    """Guard-side work for one transaction."""

    sig_verifies: int = 0
    storage_writes: int = 0
    bytes_parsed: int = 0

    def units(self) -> int:
        return (self.sig_verifies * SIG_VERIFY_UNITS
                + self.storage_writes * STORAGE_WRITE_UNITS
                + self.bytes_parsed * BYTE_PARSED_UNITS)

    def to_dict(self) -> dict:
        return {"sigVerifies": self.sig_verifies, "storageWrites": self.storage_writes,
                "bytesParsed": self.bytes_parsed, "units": self.units()}


@dataclass(frozen=True)
class CallFrame:
    origin: bytes
    msg_sender: bytes
    msg_sig: bytes
    msg_data: bytes
    depth: int
    contract: bytes
    method: str
    value: int = 0


@dataclass
class Receipt:
    status: str
    return_value: Any = None
    reason: str = ""
    site: str = ""
    trace: list = field(default_factory=list)
    transfers: list = field(default_factory=list)
    cost: CostMeter = field(default_factory=CostMeter)
    tx_hash: str = ""
    height: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        rv = self.return_value
        if isinstance(rv, (bytes, bytearray)):
            rv = "0x" + bytes(rv).hex()
        return {"status": self.status, "returnValue": rv, "reason": self.reason,
                "site": self.site, "trace": self.trace, "transfers": self.transfers,
                "cost": self.cost.to_dict(), "txHash": self.tx_hash, "height": self.height}


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


@dataclass(frozen=True)
class Transaction:
    origin: bytes
    nonce: int
    target: bytes
    method: bytes
    calldata: bytes = b""
    value: int = 0
    token_array: bytes = EMPTY_TOKEN_ARRAY
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (b"smacs-tx" + self.origin + struct.pack(">Q", self.nonce) + self.target
                + _lp(self.method) + _lp(self.calldata) + self.value.to_bytes(32, "big")
                + _lp(self.token_array))

    def hash(self) -> str:
        return keccak256(self.signing_bytes() + self.signature).hex()

    def signed(self, key: KeyPair, scheme: SignatureScheme = DEFAULT_SCHEME) -> "Transaction":
        return Transaction(self.origin, self.nonce, self.target, self.method, self.calldata,
                           self.value, self.token_array, scheme.sign(key.sk, self.signing_bytes()))

    def to_json(self) -> dict:
        return {"origin": hex_address(self.origin), "nonce": self.nonce,
                "target": hex_address(self.target), "method": self.method.hex(),
                "calldata": self.calldata.hex(), "value": self.value,
                "tokenArray": self.token_array.hex(), "signature": self.signature.hex()}

    @classmethod
    def from_json(cls, doc: dict) -> "Transaction":
        return cls(to_address(doc["origin"]), int(doc["nonce"]), to_address(doc["target"]),
                   bytes.fromhex(doc["method"]), bytes.fromhex(doc["calldata"]),
                   int(doc["value"]), bytes.fromhex(doc["tokenArray"]),
                   bytes.fromhex(doc["signature"]))


def guard_data(ttype: TokenType, expire: int, index: int, contract: bytes, origin: bytes,
               msg_sig: bytes, msg_data: bytes) -> bytes:
    """Bytes the guard checks the TS signature against.

    Equal to the TS signing payload when the request named this contract as
    cAddr, the transaction origin as sAddr, and (by type) this selector and
    these arguments.
    """
    data = contract + origin
    if ttype is not TokenType.SUPER:
        data += _lp(msg_sig)
    if ttype is TokenType.ARGUMENT:
        data += msg_data
    return signing_payload(ttype, expire, index, data)


def verify_token_onchain(ctx: "CallContext", guard: Guard, token_array: bytes,
                         meter: CostMeter | None = None) -> bool:
    """Contract-side check of the token addressed to ``ctx.this``.

    Order: extract, expiry (strict ``now > expire`` rejects), one-time
    freshness, signature. The bitmap is marked only after the signature
    verifies.
    """
    meter = meter if meter is not None else CostMeter()
    try:
        tk, scanned = scan_token_array(token_array, ctx.this)
    except (NotFound, CodecError):
        meter.bytes_parsed += len(token_array)
        return False
    meter.bytes_parsed += 2 + scanned * ADDRESS_LEN + TOKEN_LEN
    if ctx.now > tk.expire:
        return False
    if tk.index >= 0 and (guard.bitmap is None or not guard.bitmap.is_fresh(tk.index)):
        return False
    frame = ctx.frame
    data = guard_data(tk.type, tk.expire, tk.index, ctx.this, frame.origin,
                      frame.msg_sig, frame.msg_data)
    meter.bytes_parsed += len(data)
    meter.sig_verifies += 1
    if not guard.scheme.verify(guard.pk, data, tk.signature):
        return False
    if tk.index >= 0:
        guard.bitmap.check_and_mark(tk.index)
        meter.storage_writes += 1
    return True


class CallContext:
    """What a contract handler sees: message fields, storage, outgoing calls."""

    def __init__(self, chain: "Chain", contract: ContractInstance, frame: CallFrame,
                 tokens: bytes, args: Sequence[ArgPair] = ()):
        self.chain = chain
        self.contract = contract
        self.frame = frame
        self.tokens = tokens
        self.args = list(args)

    this = property(lambda self: self.contract.address)
    msg_sender = property(lambda self: self.frame.msg_sender)
    origin = property(lambda self: self.frame.origin)
    value = property(lambda self: self.frame.value)
    msg_sig = property(lambda self: self.frame.msg_sig)
    msg_data = property(lambda self: self.frame.msg_data)
    now = property(lambda self: self.chain.clock)

    def arg(self, name: str, default=None):
        for a in self.args:
            if a.name == name:
                return a.value
        return default

    def load(self, key: str, default=None):
        self.chain._step()
        return self.contract.storage.get(key, default)

    def store(self, key: str, value) -> None:
        self.chain._step()
        self.contract.storage[key] = value

    def balance(self, addr: bytes | None = None) -> int:
        return self.chain.balance_of(addr if addr is not None else self.this)

    def call(self, target: bytes, method: str | bytes, args: Sequence[ArgPair] = (),
             value: int = 0, tokens: bytes | None = None):
        """Message call; a failure in the callee propagates and reverts the transaction."""
        selector = method if isinstance(method, bytes) else self.chain.selector(target, method)
        args = [a if isinstance(a, ArgPair) else ArgPair(*a) for a in args]
        return self.chain._call(self.frame.origin, self.this, target, selector,
                                encode_args(args), value,
                                self.tokens if tokens is None else tokens,
                                self.frame.depth + 1)

    def send(self, to: bytes, amount: int):
        """Value transfer; runs the receiver's fallback if it is a contract."""
        return self.chain._call(self.frame.origin, self.this, to, FALLBACK_SELECTOR, b"",
                                amount, self.tokens, self.frame.depth + 1)

    def invoke(self, name: str):
        """Internal call into this contract: same frame, no guard."""
        return type(self.contract.code).by_name[name].handler(self.contract.code, self)


class Chain:
    def __init__(self, *, max_depth: int = DEFAULT_MAX_DEPTH, max_steps: int = DEFAULT_MAX_STEPS,
                 clock: int = 0, scheme: SignatureScheme = DEFAULT_SCHEME,
                 enforce_guards: bool = True):
        self.accounts: dict[bytes, Account] = {}
        self.contracts: dict[bytes, ContractInstance] = {}
        self.clock = clock
        self.height = 0
        self.max_depth = max_depth
        self.max_steps = max_steps
        self.scheme = scheme
        self.enforce_guards = enforce_guards
        self._deployed = 0
        self._reset_tx_state()

    def _reset_tx_state(self):
        self._trace: list[dict] = []
        self._transfers: list[dict] = []
        self._meter = CostMeter()
        self._steps = 0

    # -- clock ------------------------------------------------------------

    def now(self) -> int:
        return self.clock

    def set_time(self, t: int) -> None:
        if t < self.clock:
            raise ClockRegression(f"clock is at {self.clock}, cannot go back to {t}")
        self.clock = t

    def advance(self, seconds: int) -> None:
        self.set_time(self.clock + seconds)

    # -- accounts and deployment -------------------------------------------

    def account(self, addr: bytes) -> Account:
        return self.accounts.setdefault(addr, Account())

    def balance_of(self, addr: bytes) -> int:
        acct = self.accounts.get(addr)
        return acct.balance if acct else 0

    def fund(self, addr: bytes, amount: int) -> None:
        self.account(addr).balance += amount

    def total_supply(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def register_contract(self, code: ContractCode | type[ContractCode] | str, *,
                          label: str = "", creator: bytes | None = None,
                          guard_pk: bytes | None = None, bitmap_bits: int | None = None,
                          balance: int = 0, **params) -> bytes:
        if isinstance(code, str):
            code = CODE_REGISTRY[code]
        if isinstance(code, type):
            code = code()
        self._deployed += 1
        seed = b"smacs-contract" + (creator or bytes(ADDRESS_LEN)) + struct.pack(">Q", self._deployed)
        addr = keccak256(seed)[-ADDRESS_LEN:]
        guard = None
        if guard_pk is not None:
            guard = Guard(guard_pk, new_bitmap(bitmap_bits) if bitmap_bits else None, self.scheme)
        inst = ContractInstance(addr, code, {}, guard, creator, label)
        self.contracts[addr] = inst
        self.account(addr).balance += balance
        frame = CallFrame(creator or bytes(ADDRESS_LEN), creator or bytes(ADDRESS_LEN),
                          b"", b"", 0, addr, "constructor")
        code.setup(CallContext(self, inst, frame, EMPTY_TOKEN_ARRAY), **params)
        self._steps = 0
        return addr

    def contract(self, addr: bytes) -> ContractInstance:
        try:
            return self.contracts[addr]
        except KeyError:
            raise UnknownContract(f"no contract at {hex_address(addr)}") from None

    def selector(self, addr: bytes, name: str) -> bytes:
        code = type(self.contract(addr).code)
        try:
            return code.selector(name)
        except KeyError:
            raise Reverted(f"{code.__name__} has no method {name!r}") from None

    def method_names(self, addr: bytes) -> dict[bytes, str]:
        return type(self.contract(addr).code).method_names()

    def contracts_created_by(self, creator: bytes) -> list[bytes]:
        return [a for a, c in self.contracts.items() if c.creator == creator]

    def label(self, addr: bytes) -> str:
        inst = self.contracts.get(addr)
        return inst.name if inst else hex_address(addr)

    # -- execution ----------------------------------------------------------

    def _step(self) -> None:
        self._steps += 1
        if self._steps > self.max_steps:
            raise Reverted("step limit exceeded")

    def _transfer(self, src: bytes, dst: bytes, amount: int) -> None:
        if amount < 0:
            raise Reverted("negative value")
        if amount == 0:
            return
        if self.balance_of(src) < amount:
            raise Reverted("insufficient balance", site=hex_address(src))
        self.account(src).balance -= amount
        self.account(dst).balance += amount
        self._transfers.append({"from": hex_address(src), "to": hex_address(dst), "value": amount})

    def _call(self, origin: bytes, sender: bytes, target: bytes, selector: bytes,
              calldata: bytes, value: int, tokens: bytes, depth: int):
        if depth > self.max_depth:
            raise Reverted("call depth exceeded")
        self._step()
        self._transfer(sender, target, value)
        inst = self.contracts.get(target)
        if inst is None:
            return None
        spec = inst.code.lookup(selector)
        if spec is None:
            if selector == FALLBACK_SELECTOR:
                raise Reverted("no fallback", site=inst.name)
            raise Reverted("unknown method", site=inst.name)
        site = f"{inst.name}.{spec.name}"
        if not spec.visibility.callable_externally:
            raise Reverted("method not externally callable", site=site)
        if value and not spec.payable:
            raise Reverted("non-payable method received value", site=site)
        frame = CallFrame(origin, sender, selector, calldata, depth, target, spec.name, value)
        self._trace.append({"depth": depth, "contract": hex_address(target),
                            "name": inst.name, "method": spec.name,
                            "msgSender": hex_address(sender)})
        ctx = CallContext(self, inst, frame, tokens)
        if inst.guard is not None and self.enforce_guards:
            if not verify_token_onchain(ctx, inst.guard, tokens, self._meter):
                raise Reverted("token", site=site)
        try:
            ctx.args = decode_args(calldata)
        except Malformed:
            raise Reverted("malformed calldata", site=site) from None
        try:
            return spec.handler(inst.code, ctx)
        except Reverted:
            raise
        except Exception as exc:
            raise Reverted(f"trap: {type(exc).__name__}: {exc}", site=site) from exc

    def _capture(self):
        return (copy.deepcopy(self.accounts),
                {a: (copy.deepcopy(c.storage), c.guard.bitmap.copy()
                     if c.guard is not None and c.guard.bitmap is not None else None)
                 for a, c in self.contracts.items()})

    def _restore(self, saved) -> None:
        accounts, contracts = saved
        self.accounts = accounts
        for addr, (storage, bitmap) in contracts.items():
            inst = self.contracts[addr]
            inst.storage = storage
            if bitmap is not None:
                inst.guard.bitmap = bitmap

    def execute_call(self, origin: bytes, target: bytes, method: bytes | str,
                     args: Sequence[ArgPair] | bytes = (), value: int = 0,
                     token_array: bytes = EMPTY_TOKEN_ARRAY, caller: bytes | None = None) -> Receipt:
        """Run one top-level call atomically, without signature or nonce checks.

        ``caller`` overrides ``msg.sender`` of the top frame (default: origin);
        validators use it to model a call arriving through a contract.
        """
        self.contract(target)
        selector = method if isinstance(method, bytes) else self.selector(target, method)
        calldata = args if isinstance(args, (bytes, bytearray)) else encode_args(args)
        self._reset_tx_state()
        saved = self._capture()
        try:
            rv = self._call(origin, caller or origin, target, selector, bytes(calldata),
                            value, token_array, 0)
            receipt = Receipt("ok", rv)
        except Reverted as exc:
            self._restore(saved)
            receipt = Receipt("reverted", None, exc.reason, exc.site)
        except RecursionError:
            self._restore(saved)
            receipt = Receipt("reverted", None, "host recursion limit", "")
        receipt.trace = self._trace
        receipt.transfers = self._transfers if receipt.ok else []
        receipt.cost = self._meter
        receipt.height = self.height
        self._reset_tx_state()
        return receipt

    def submit_transaction(self, tx: Transaction) -> Receipt:
        if tx.target not in self.contracts:
            raise UnknownContract(f"no contract at {hex_address(tx.target)}")
        if len(tx.signature) != 65:
            raise BadSignature("transaction is not signed")
        pk = self.scheme.recover(tx.signing_bytes(), tx.signature)
        if pk is None or address_of(pk) != tx.origin:
            raise BadSignature("signature does not match origin")
        acct = self.account(tx.origin)
        if tx.nonce < acct.nonce:
            raise NonceUsed(f"nonce {tx.nonce} already used by {hex_address(tx.origin)}")
        if tx.nonce > acct.nonce:
            raise BadNonce(f"expected nonce {acct.nonce}, got {tx.nonce}")
        acct.nonce += 1
        self.height += 1
        receipt = self.execute_call(tx.origin, tx.target, tx.method, tx.calldata, tx.value,
                                    tx.token_array)
        receipt.tx_hash = tx.hash()
        return receipt

    def transaction(self, key: KeyPair, target: bytes, method: str | bytes,
                    args: Sequence[ArgPair] = (), value: int = 0,
                    token_array: bytes = EMPTY_TOKEN_ARRAY) -> Transaction:
        """Build and sign a transaction from ``key`` at its next nonce."""
        origin = key.address
        selector = method if isinstance(method, bytes) else self.selector(target, method)
        args = [a if isinstance(a, ArgPair) else ArgPair(*a) for a in args]
        tx = Transaction(origin, self.account(origin).nonce, target, selector,
                         encode_args(args), value, token_array)
        return tx.signed(key, self.scheme)

    # -- snapshots and dumps -------------------------------------------------

    def snapshot(self) -> "Chain":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "clock": self.clock,
            "deployed": self._deployed,
            "accounts": {hex_address(a): {"balance": acct.balance, "nonce": acct.nonce}
                         for a, acct in sorted(self.accounts.items())},
            "contracts": [
                {
                    "address": hex_address(a),
                    "code": type(c.code).__name__,
                    "label": c.label,
                    "creator": hex_address(c.creator) if c.creator else None,
                    "storage": {k: _jsonable(v) for k, v in sorted(c.storage.items())},
                    "guard": None if c.guard is None else {
                        "pk": c.guard.pk.hex(),
                        "bitmap": c.guard.bitmap.to_dict() if c.guard.bitmap else None,
                    },
                }
                for a, c in sorted(self.contracts.items())
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, **kwargs) -> "Chain":
        chain = cls(clock=int(doc.get("clock", 0)), **kwargs)
        chain.height = int(doc.get("height", 0))
        chain._deployed = int(doc.get("deployed", len(doc.get("contracts", []))))
        for addr, acct in doc.get("accounts", {}).items():
            chain.accounts[to_address(addr)] = Account(int(acct["balance"]), int(acct["nonce"]))
        for entry in doc.get("contracts", []):
            addr = to_address(entry["address"])
            guard = None
            if entry.get("guard"):
                g = entry["guard"]
                bm = BitmapState.from_dict(g["bitmap"]) if g.get("bitmap") else None
                guard = Guard(bytes.fromhex(g["pk"]), bm, chain.scheme)
            creator = to_address(entry["creator"]) if entry.get("creator") else None
            chain.contracts[addr] = ContractInstance(
                addr, CODE_REGISTRY[entry["code"]](), dict(entry.get("storage", {})),
                guard, creator, entry.get("label", ""))
        return chain

    def state_digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(value):
    if isinstance(value, (bytes, bytearray)):
        return "0x" + bytes(value).hex()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def storage_digest(storage: dict) -> str:
    blob = json.dumps({k: _jsonable(v) for k, v in storage.items()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()
