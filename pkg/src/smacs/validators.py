"""Runtime-verification checks run by the TS before issuing argument tokens.

Both checks execute the requested call on a private copy of the chain with
guards switched off, so the authoritative state is never touched.

* ``nversion``: every head implementation must produce the same return
  value, storage digest and outgoing transfers.
* ``ecf``: the call must not re-enter a contract that still has a live
  frame on the call stack.
"""

from __future__ import annotations

import threading
import time
from collections import Counter as _Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .chain.sim import Chain, storage_digest
from .errors import HeadConfigError
from .token_core import ArgPair, TokenRequest, hex_address, is_hex_address, to_address

VALIDATOR_MAX_DEPTH = 64
VALIDATOR_MAX_STEPS = 10**6


@dataclass(frozen=True)
class SimulatedCall:
    contract: bytes
    method: bytes
    args: tuple[ArgPair, ...] = ()
    caller: bytes = bytes(20)
    value: int = 0
    origin: bytes | None = None


@dataclass(frozen=True)
class ValidatorVerdict:
    passed: bool
    detail: str = ""
    elapsed: float = field(default=0.0, compare=False)


def _sandbox(sim: Chain) -> Chain:
    box = sim.snapshot()
    box.enforce_guards = False
    box.max_depth = min(box.max_depth, VALIDATOR_MAX_DEPTH)
    box.max_steps = min(box.max_steps, VALIDATOR_MAX_STEPS)
    return box


def _run(sim: Chain, call: SimulatedCall, target: bytes):
    box = _sandbox(sim)
    receipt = box.execute_call(call.origin or call.caller, target, call.method, call.args,
                               call.value, caller=call.caller)
    return box, receipt


def _head_output(box: Chain, head: bytes, receipt) -> tuple:
    if not receipt.ok:
        return ("trap", receipt.reason)
    me = hex_address(head)
    transfers = tuple(
        ("self" if t["from"] == me else t["from"], "self" if t["to"] == me else t["to"], t["value"])
        for t in receipt.transfers)
    return ("ok", repr(receipt.return_value), storage_digest(box.contract(head).storage), transfers)


def nversion_uniform(call: SimulatedCall, heads: Sequence[bytes], sim: Chain) -> ValidatorVerdict:
    started = time.perf_counter()
    if len(heads) < 2:
        raise HeadConfigError("an N-version check needs at least two heads")
    if len(set(heads)) != len(heads):
        raise HeadConfigError("heads must live at distinct addresses")
    tables = {tuple(type(sim.contract(h).code).method_table()) for h in heads}
    if len(tables) != 1:
        raise HeadConfigError("heads expose different method tables")

    outputs = []
    for head in heads:
        box, receipt = _run(sim, call, head)
        outputs.append(_head_output(box, head, receipt))

    elapsed = time.perf_counter() - started
    if len(set(outputs)) == 1:
        detail = f"all {len(heads)} heads trapped alike: {outputs[0][1]}" if outputs[0][0] == "trap" else ""
        return ValidatorVerdict(True, detail, elapsed)
    counts = _Counter(outputs)
    reference = max(outputs, key=lambda o: (counts[o], -outputs.index(o)))
    diverging = [f"{sim.label(h)}@{hex_address(h)}" for h, o in zip(heads, outputs) if o != reference]
    return ValidatorVerdict(False, "heads diverge: " + ", ".join(diverging), elapsed)


def find_reentry(trace: Sequence[dict]) -> list[dict] | None:
    """Frames from the first live frame of a contract to its re-entry, if any.

    ``trace`` lists frames in call order with their depth, so the live stack at
    each entry is recovered by popping frames at the same or greater depth.
    A plain value transfer landing in a live contract's fallback is the
    callback itself, not a re-entry; only named method entries count.
    """
    stack: list[dict] = []
    for frame in trace:
        while stack and stack[-1]["depth"] >= frame["depth"]:
            stack.pop()
        if frame.get("method") != "fallback":
            for k, live in enumerate(stack):
                if live["contract"] == frame["contract"]:
                    return stack[k:] + [frame]
        stack.append(frame)
    return None


def ecf_check(call: SimulatedCall, sim: Chain) -> ValidatorVerdict:
    started = time.perf_counter()
    _, receipt = _run(sim, call, call.contract)
    elapsed = time.perf_counter() - started
    if not receipt.ok:
        where = receipt.site or sim.label(call.contract)
        return ValidatorVerdict(False, f"trap at {where}: {receipt.reason}", elapsed)
    path = find_reentry(receipt.trace)
    if path is not None:
        hops = " -> ".join(f"{f['name']}.{f['method']}" for f in path)
        return ValidatorVerdict(False, f"re-entrancy: {hops}", elapsed)
    return ValidatorVerdict(True, "", elapsed)


# -- glue used by the token service ------------------------------------------


@dataclass
class ValidatorEnv:
    """What validators need to know about the contracts a TS protects.

    ``sim`` returns the TS's private chain (a fresh view per request).
    ``heads`` maps a protected contract to its head addresses in that chain.
    ``caller_args`` maps ``(contract, selector)`` to the argument naming the
    immediate caller; without one, the requesting account is the caller.
    """

    sim: Callable[[], Chain]
    heads: Mapping[bytes, Sequence[bytes]] = field(default_factory=dict)
    caller_args: Mapping[tuple[bytes, bytes], str] = field(default_factory=dict)

    def simulated_call(self, req: TokenRequest) -> SimulatedCall:
        caller = req.s_addr
        arg_name = self.caller_args.get((req.c_addr, req.method_id))
        if arg_name is not None:
            for a in req.args:
                if a.name == arg_name and is_hex_address(a.value):
                    caller = to_address(a.value)
        return SimulatedCall(req.c_addr, req.method_id, tuple(req.args), caller, 0, req.s_addr)


def run_nversion(req: TokenRequest, env: ValidatorEnv) -> ValidatorVerdict:
    heads = list(env.heads.get(req.c_addr, ()))
    try:
        return nversion_uniform(env.simulated_call(req), heads, env.sim())
    except HeadConfigError as exc:
        return ValidatorVerdict(False, f"misconfigured: {exc}")


def run_ecf(req: TokenRequest, env: ValidatorEnv) -> ValidatorVerdict:
    return ecf_check(env.simulated_call(req), env.sim())


REGISTRY: dict[str, Callable[[TokenRequest, ValidatorEnv], ValidatorVerdict]] = {
    "nversion": run_nversion,
    "ecf": run_ecf,
}


class LatencyStats:
    """Running per-validator latency totals (seconds)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[str, list] = {}

    def record(self, name: str, seconds: float) -> None:
        with self._lock:
            row = self._data.setdefault(name, [0, 0.0])
            row[0] += 1
            row[1] += seconds

    def snapshot(self) -> dict[str, dict]:
        with self._lock:
            return {name: {"count": n, "meanMs": 1000 * total / n if n else 0.0}
                    for name, (n, total) in self._data.items()}
