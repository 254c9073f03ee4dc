"""Token and token-request encodings plus the signature scheme.

All integers on the wire are big-endian. A token is always 86 bytes::

    type (1) | expire (4) | index (16, two's complement) | signature (65)

The TS signs ``type | expire | index | reqPayload`` where ``reqPayload`` is
``cAddr | sAddr`` followed, depending on the type, by the length-prefixed
method selector and length-prefixed argument name/value pairs.
"""

from __future__ import annotations

import enum
import hashlib
import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import coincurve
from Crypto.Hash import keccak

from .errors import (
    BadLength,
    BadType,
    Malformed,
    MalformedSignature,
    NotFound,
    ShapeMismatch,
)

ADDRESS_LEN = 20
SELECTOR_LEN = 4
SIGNATURE_LEN = 65
TOKEN_LEN = 86
RECORD_LEN = ADDRESS_LEN + TOKEN_LEN
NO_INDEX = -1

_INDEX_MIN = -(1 << 127)
_INDEX_MAX = (1 << 127) - 1
_U32_MAX = (1 << 32) - 1
_HEX_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")


class TokenType(enum.IntEnum):
    SUPER = 1
    METHOD = 2
    ARGUMENT = 3

    @classmethod
    def parse(cls, value: "TokenType | int | str") -> "TokenType":
        if isinstance(value, TokenType):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise BadType(f"unknown token type {value!r}") from None
        try:
            return cls(value)
        except ValueError:
            raise BadType(f"unknown token type tag {value!r}") from None


def keccak256(data: bytes) -> bytes:
    return keccak.new(digest_bits=256, data=data).digest()


def method_id(signature: str) -> bytes:
    """4-byte selector of a canonical method signature such as ``"withdraw(address)"``."""
    return keccak256(signature.encode("utf-8"))[:SELECTOR_LEN]


def to_address(value: "bytes | str") -> bytes:
    if isinstance(value, (bytes, bytearray)):
        if len(value) != ADDRESS_LEN:
            raise BadLength(f"address must be {ADDRESS_LEN} bytes, got {len(value)}")
        return bytes(value)
    if not _HEX_ADDRESS.match(value):
        raise Malformed(f"not a 0x-prefixed 20-byte hex address: {value!r}")
    return bytes.fromhex(value[2:])


def hex_address(addr: bytes) -> str:
    return "0x" + addr.hex()


def is_hex_address(text: str) -> bool:
    return bool(_HEX_ADDRESS.match(text))


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


@dataclass(frozen=True)
class ArgPair:
    name: str
    value: str


def encode_args(args: Iterable[ArgPair]) -> bytes:
    """Calldata form of an argument list; identical to its reqPayload suffix."""
    return b"".join(_lp(a.name.encode("utf-8")) + _lp(a.value.encode("utf-8")) for a in args)


def decode_args(data: bytes) -> list[ArgPair]:
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise Malformed("truncated length prefix in calldata")
        (size,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise Malformed("length prefix overruns calldata")
        try:
            fields.append(data[pos : pos + size].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise Malformed("calldata field is not UTF-8") from exc
        pos += size
    if len(fields) % 2:
        raise Malformed("dangling argument name in calldata")
    return [ArgPair(fields[i], fields[i + 1]) for i in range(0, len(fields), 2)]


@dataclass(frozen=True)
class TokenRequest:
    type: TokenType
    c_addr: bytes
    s_addr: bytes
    method_id: bytes | None = None
    args: tuple[ArgPair, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "type", TokenType.parse(self.type))
        object.__setattr__(self, "args", tuple(self.args))

    def validate(self) -> "TokenRequest":
        """Raise ShapeMismatch unless the present fields match the token type."""
        if len(self.c_addr) != ADDRESS_LEN or len(self.s_addr) != ADDRESS_LEN:
            raise ShapeMismatch("cAddr and sAddr must be 20 bytes")
        if self.type is TokenType.SUPER:
            if self.method_id is not None or self.args:
                raise ShapeMismatch("super request carries no methodId and no args")
        else:
            if self.method_id is None or len(self.method_id) != SELECTOR_LEN:
                raise ShapeMismatch(f"{self.type.name.lower()} request needs a 4-byte methodId")
            if self.type is TokenType.METHOD and self.args:
                raise ShapeMismatch("method request carries no args")
            if self.type is TokenType.ARGUMENT and not self.args:
                raise ShapeMismatch("argument request needs at least one arg pair")
        for a in self.args:
            if not a.name:
                raise ShapeMismatch("argument names must be non-empty")
        return self

    @classmethod
    def from_json(cls, doc: dict) -> "TokenRequest":
        """Build from the POST /v1/token body; raises ShapeMismatch on bad fields."""
        if not isinstance(doc, dict):
            raise ShapeMismatch("request body must be an object")
        unknown = set(doc) - {"type", "cAddr", "sAddr", "methodId", "args"}
        if unknown:
            raise ShapeMismatch(f"unknown request fields {sorted(unknown)}")
        try:
            ttype = TokenType.parse(doc["type"])
            c_addr = to_address(doc["cAddr"])
            s_addr = to_address(doc["sAddr"])
            mid = doc.get("methodId")
            if mid is not None:
                mid = bytes.fromhex(mid[2:] if mid.startswith("0x") else mid)
            args = []
            for item in doc.get("args") or []:
                if isinstance(item, dict):
                    args.append(ArgPair(str(item["name"]), str(item["value"])))
                else:
                    name, value = item
                    args.append(ArgPair(str(name), str(value)))
        except ShapeMismatch:
            raise
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ShapeMismatch(f"malformed request: {exc}") from exc
        return cls(ttype, c_addr, s_addr, mid, tuple(args)).validate()

    def to_json(self) -> dict:
        doc = {
            "type": self.type.name.lower(),
            "cAddr": hex_address(self.c_addr),
            "sAddr": hex_address(self.s_addr),
        }
        if self.method_id is not None:
            doc["methodId"] = "0x" + self.method_id.hex()
        if self.args:
            doc["args"] = [{"name": a.name, "value": a.value} for a in self.args]
        return doc


def encode_req_payload(req: TokenRequest) -> bytes:
    req.validate()
    out = req.c_addr + req.s_addr
    if req.type is not TokenType.SUPER:
        out += _lp(req.method_id)
    if req.type is TokenType.ARGUMENT:
        out += encode_args(req.args)
    return out


def _index_bytes(index: int) -> bytes:
    if not _INDEX_MIN <= index <= _INDEX_MAX:
        raise Malformed(f"index {index} does not fit in 128 signed bits")
    return index.to_bytes(16, "big", signed=True)


def signing_payload(ttype: TokenType | int, expire: int, index: int, req_payload: bytes) -> bytes:
    if not 0 <= expire <= _U32_MAX:
        raise Malformed(f"expire {expire} does not fit in 32 unsigned bits")
    return struct.pack(">BI", int(ttype), expire) + _index_bytes(index) + req_payload


@dataclass(frozen=True)
class Token:
    type: TokenType
    expire: int
    index: int
    signature: bytes

    @property
    def one_time(self) -> bool:
        return self.index >= 0

    def hex(self) -> str:
        return encode_token(self).hex()


def encode_token(tk: Token) -> bytes:
    if len(tk.signature) != SIGNATURE_LEN:
        raise MalformedSignature(f"signature must be {SIGNATURE_LEN} bytes")
    return signing_payload(tk.type, tk.expire, tk.index, b"") + tk.signature


def decode_token(data: bytes) -> Token:
    if len(data) != TOKEN_LEN:
        raise BadLength(f"token must be {TOKEN_LEN} bytes, got {len(data)}")
    ttype = TokenType.parse(data[0])
    (expire,) = struct.unpack_from(">I", data, 1)
    index = int.from_bytes(data[5:21], "big", signed=True)
    return Token(ttype, expire, index, bytes(data[21:]))


def encode_token_array(entries: Sequence[tuple[bytes, Token]]) -> bytes:
    addrs = [a for a, _ in entries]
    if len(set(addrs)) != len(addrs):
        raise Malformed("duplicate contract address in token array")
    if len(entries) > 0xFFFF:
        raise Malformed("too many tokens for a 2-byte count")
    out = [struct.pack(">H", len(entries))]
    for addr, tk in entries:
        out.append(to_address(addr) + encode_token(tk))
    return b"".join(out)


def scan_token_array(array: bytes, addr: bytes) -> tuple[Token, int]:
    """Linear scan; returns the token and how many records were inspected."""
    if len(array) < 2:
        raise Malformed("token array shorter than its count field")
    (count,) = struct.unpack_from(">H", array, 0)
    if len(array) != 2 + RECORD_LEN * count:
        raise Malformed(f"token array length {len(array)} does not match count {count}")
    for k in range(count):
        off = 2 + k * RECORD_LEN
        if array[off : off + ADDRESS_LEN] == addr:
            return decode_token(array[off + ADDRESS_LEN : off + RECORD_LEN]), k + 1
    raise NotFound(f"no token for {hex_address(addr)}")


def extract_token(array: bytes, addr: bytes) -> Token:
    return scan_token_array(array, addr)[0]


def decode_token_array(array: bytes) -> list[tuple[bytes, Token]]:
    if len(array) < 2:
        raise Malformed("token array shorter than its count field")
    (count,) = struct.unpack_from(">H", array, 0)
    if len(array) != 2 + RECORD_LEN * count:
        raise Malformed(f"token array length {len(array)} does not match count {count}")
    out = []
    for k in range(count):
        off = 2 + k * RECORD_LEN
        out.append((bytes(array[off : off + ADDRESS_LEN]),
                    decode_token(array[off + ADDRESS_LEN : off + RECORD_LEN])))
    return out


EMPTY_TOKEN_ARRAY = encode_token_array([])


# -- signatures -------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    sk: bytes
    pk: bytes

    @property
    def address(self) -> bytes:
        return address_of(self.pk)

    def to_hex(self) -> dict:
        return {"sk": self.sk.hex(), "pk": self.pk.hex()}

    @classmethod
    def from_hex(cls, sk_hex: str) -> "KeyPair":
        sk = bytes.fromhex(sk_hex.removeprefix("0x"))
        return cls(sk, coincurve.PrivateKey(sk).public_key.format(compressed=True))


class SignatureScheme(Protocol):
    name: str

    def keygen(self, seed: bytes | None = None) -> KeyPair: ...

    def sign(self, sk: bytes, message: bytes) -> bytes: ...

    def verify(self, pk: bytes, message: bytes, signature: bytes) -> bool: ...


class Secp256k1:
    """Recoverable ECDSA over secp256k1 with keccak-256 message hashing.

    Signatures are ``r | s | v`` (32 + 32 + 1 bytes), ``v`` in {0, 1}.
    """

    name = "secp256k1-keccak-recoverable"

    def keygen(self, seed: bytes | None = None) -> KeyPair:
        if seed is None:
            key = coincurve.PrivateKey()
        else:
            material = hashlib.sha256(b"smacs-key:" + seed).digest()
            while True:
                try:
                    key = coincurve.PrivateKey(material)
                    break
                except ValueError:
                    material = hashlib.sha256(material).digest()
        return KeyPair(key.secret, key.public_key.format(compressed=True))

    def sign(self, sk: bytes, message: bytes) -> bytes:
        return coincurve.PrivateKey(sk).sign_recoverable(message, hasher=keccak256)

    def recover(self, message: bytes, signature: bytes) -> bytes | None:
        if len(signature) != SIGNATURE_LEN:
            raise MalformedSignature(f"signature must be {SIGNATURE_LEN} bytes")
        try:
            pub = coincurve.PublicKey.from_signature_and_message(
                signature, message, hasher=keccak256)
        except Exception:
            return None
        return pub.format(compressed=True)

    def verify(self, pk: bytes, message: bytes, signature: bytes) -> bool:
        return self.recover(message, signature) == pk


DEFAULT_SCHEME = Secp256k1()


def keygen(seed: bytes | None = None) -> KeyPair:
    return DEFAULT_SCHEME.keygen(seed)


def sign(sk: bytes, message: bytes) -> bytes:
    return DEFAULT_SCHEME.sign(sk, message)


def verify(pk: bytes, message: bytes, signature: bytes) -> bool:
    return DEFAULT_SCHEME.verify(pk, message, signature)


def recover(message: bytes, signature: bytes) -> bytes | None:
    return DEFAULT_SCHEME.recover(message, signature)


def address_of(pk: bytes) -> bytes:
    """Account address: last 20 bytes of keccak-256 over the uncompressed point."""
    point = coincurve.PublicKey(pk).format(compressed=False)[1:]
    return keccak256(point)[-ADDRESS_LEN:]


def issue_token(sk: bytes, req: TokenRequest, expire: int, index: int = NO_INDEX,
                scheme: SignatureScheme = DEFAULT_SCHEME) -> Token:
    payload = signing_payload(req.type, expire, index, encode_req_payload(req))
    return Token(req.type, expire, index, scheme.sign(sk, payload))


def verify_token_for_request(pk: bytes, tk: Token, req: TokenRequest,
                             scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
    if tk.type is not req.type:
        return False
    payload = signing_payload(tk.type, tk.expire, tk.index, encode_req_payload(req))
    return scheme.verify(pk, payload, tk.signature)
