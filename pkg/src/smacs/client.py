"""Client side: fetch tokens from one or more TSes and send the transaction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import httpx

from .chain.sim import Chain, Receipt
from .errors import Denied, ShapeMismatch, SmacsError
from .service import TokenService
from .token_core import (
    ArgPair,
    KeyPair,
    Token,
    TokenRequest,
    TokenType,
    decode_token,
    encode_token_array,
)


class TokenSource(Protocol):
    def request_token(self, req: TokenRequest) -> Token: ...


class HttpTokenClient:
    """Talks to ``POST /v1/token``. Pass ``client`` to reuse a session or a test client."""

    def __init__(self, base_url: str = "", client: httpx.Client | None = None, timeout: float = 10.0):
        self.http = client if client is not None else httpx.Client(base_url=base_url, timeout=timeout)

    def request_token(self, req: TokenRequest) -> Token:
        resp = self.http.post("/v1/token", json=req.to_json())
        body = resp.json()
        if resp.status_code == 200:
            return decode_token(bytes.fromhex(body["token"]))
        if resp.status_code == 403:
            raise Denied(body.get("reason", ""))
        if resp.status_code == 400:
            raise ShapeMismatch(body.get("reason", ""))
        raise SmacsError(f"TS answered {resp.status_code}: {body}")

    def pubkey(self) -> bytes:
        return bytes.fromhex(self.http.get("/v1/pubkey").json()["pubkey"])


class LocalTokenClient:
    """In-process adapter with the same surface as HttpTokenClient."""

    def __init__(self, service: TokenService):
        self.service = service

    def request_token(self, req: TokenRequest) -> Token:
        return self.service.handle_token_request(req).token

    def pubkey(self) -> bytes:
        return self.service.pubkey


@dataclass
class Hop:
    """One contract the transaction will reach, and the token to ask for it."""

    contract: bytes
    method: str
    args: Sequence[ArgPair] = field(default_factory=tuple)
    type: TokenType = TokenType.METHOD


def _source_for(ts: TokenSource | Mapping[bytes, TokenSource], contract: bytes) -> TokenSource:
    if isinstance(ts, Mapping):
        return ts[contract]
    return ts


def build_request(chain: Chain, key: KeyPair, hop: Hop) -> TokenRequest:
    ttype = TokenType.parse(hop.type)
    selector = None if ttype is TokenType.SUPER else chain.selector(hop.contract, hop.method)
    args = tuple(hop.args) if ttype is TokenType.ARGUMENT else ()
    return TokenRequest(ttype, hop.contract, key.address, selector, args)


def fetch_tokens(ts, chain: Chain, key: KeyPair, hops: Sequence[Hop]) -> bytes:
    """Token array with one token per guarded contract on the path."""
    entries = []
    for hop in hops:
        if chain.contract(hop.contract).guard is None:
            continue
        req = build_request(chain, key, hop).validate()
        entries.append((hop.contract, _source_for(ts, hop.contract).request_token(req)))
    return encode_token_array(entries)


def send_with_tokens(chain: Chain, key: KeyPair, hops: Sequence[Hop], token_array: bytes,
                     value: int = 0) -> Receipt:
    first = hops[0]
    tx = chain.transaction(key, first.contract, first.method, first.args, value, token_array)
    return chain.submit_transaction(tx)


def client_request_and_send(ts, chain: Chain, key: KeyPair, hops: Sequence[Hop],
                            value: int = 0) -> Receipt:
    """Fetch every token the call chain needs, then sign and submit the transaction."""
    return send_with_tokens(chain, key, hops, fetch_tokens(ts, chain, key, hops), value)
