"""Token Service throughput and validator latency measurements.

Each batch of ``n`` requests goes through a freshly started worker pool, the
way a client would open connections and fire a burst at the TS. Per-batch
setup is paid once, so larger batches amortize it.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .chain import AltLedgerHead, Chain, LedgerHead, bank_attacker_fixture
from .rules import rules_from_json
from .service import ContractEntry, CounterStore, MethodPolicy, TokenService
from .token_core import ArgPair, TokenRequest, TokenType, hex_address, keygen, method_id
from .validators import SimulatedCall, ecf_check, nversion_uniform

BATCH_SIZES = (1, 10, 100, 1_000, 10_000, 100_000)
BENCH_TYPES = ("super", "method", "argument", "argument-one-time")
THROUGHPUT_FLOOR = 48.0


@dataclass(frozen=True)
class ThroughputRow:
    type: str
    batch: int
    seconds: float
    req_per_s: float


@dataclass
class BenchFixture:
    service: TokenService
    requests: dict[str, TokenRequest]
    tmpdir: tempfile.TemporaryDirectory | None = None


def bench_fixture(counter_dir: str | Path | None = None) -> BenchFixture:
    """A TS loaded with whitelist/blacklist rules over one contract with two methods.

    ``methodA`` issues reusable tokens, ``methodB`` one-time tokens. The
    counter is file-backed so one-time issuance pays its durability cost.
    """
    tmp = None
    if counter_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="smacs-bench-")
        counter_dir = tmp.name
    ts_key = keygen(b"bench-ts")
    client = keygen(b"bench-client")
    blocked = keygen(b"bench-blocked")
    contract = keygen(b"bench-contract").address
    methods = {method_id("methodA(string)"): "methodA", method_id("methodB(string)"): "methodB"}
    entry = ContractEntry(contract, methods, policies={"methodB": MethodPolicy(one_time=True)})
    rules = rules_from_json({
        "sender": {"whitelist": [hex_address(client.address)]},
        "method": {
            "methodA": {"blacklist": [hex_address(blocked.address)]},
            "methodB": {"blacklist": [hex_address(blocked.address)]},
        },
        "argument": {"argA": {"whitelist": ["alpha", "beta"]}},
    })
    counter = CounterStore(Path(counter_dir) / "counter.json")
    service = TokenService(ts_key, rules, {contract: entry}, counter=counter)
    s = client.address
    arg = (ArgPair("argA", "alpha"),)
    sel_a, sel_b = method_id("methodA(string)"), method_id("methodB(string)")
    requests = {
        "super": TokenRequest(TokenType.SUPER, contract, s),
        "method": TokenRequest(TokenType.METHOD, contract, s, sel_a),
        "argument": TokenRequest(TokenType.ARGUMENT, contract, s, sel_a, arg),
        "argument-one-time": TokenRequest(TokenType.ARGUMENT, contract, s, sel_b, arg),
    }
    return BenchFixture(service, requests, tmp)


def run_batch(service: TokenService, req: TokenRequest, n: int, concurrency: int = 4) -> float:
    """Seconds to push ``n`` copies of ``req`` through a fresh worker pool."""
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, min(concurrency, n))) as pool:
        for _ in pool.map(service.handle_token_request, [req] * n, chunksize=max(1, n // 64)):
            pass
    return time.perf_counter() - started


def bench_throughput(service: TokenService, requests: dict[str, TokenRequest],
                     types: Iterable[str] = BENCH_TYPES,
                     batch_sizes: Sequence[int] = BATCH_SIZES,
                     concurrency: int = 4) -> list[ThroughputRow]:
    rows = []
    for name in types:
        req = requests[name]
        service.handle_token_request(req)  # warm caches outside the timed region
        for n in batch_sizes:
            seconds = run_batch(service, req, n, concurrency)
            rows.append(ThroughputRow(name, n, seconds, n / seconds if seconds > 0 else float("inf")))
    return rows


def rows_to_csv(rows: Sequence[ThroughputRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["type", "batch", "seconds", "req_per_s"])
    for r in rows:
        writer.writerow([r.type, r.batch, f"{r.seconds:.6f}", f"{r.req_per_s:.2f}"])
    return buf.getvalue()


def rows_to_json(rows: Sequence[ThroughputRow], validator_latency: dict | None = None) -> dict:
    """Plot-ready: one series per token type, x = batch size, y = req/s."""
    series: dict[str, dict[str, list]] = {}
    for r in rows:
        s = series.setdefault(r.type, {"batch": [], "reqPerSec": [], "seconds": []})
        s["batch"].append(r.batch)
        s["reqPerSec"].append(r.req_per_s)
        s["seconds"].append(r.seconds)
    doc = {"schema": "smacs-bench/1", "series": series,
           "rows": [asdict(r) for r in rows]}
    if validator_latency is not None:
        doc["validatorLatencyMs"] = validator_latency
    return doc


def check_shape(rows: Sequence[ThroughputRow], slack: float = 0.10,
                floor: float = THROUGHPUT_FLOOR) -> dict[str, bool]:
    """Ordering at the largest batch, batching gain, and the per-type floor."""
    by = {(r.type, r.batch): r.req_per_s for r in rows}
    types = [t for t in BENCH_TYPES if any(r.type == t for r in rows)]
    largest = max(r.batch for r in rows)
    smallest = min(r.batch for r in rows)
    top = [by[(t, largest)] for t in types]
    return {
        "ordering": all(a >= (1 - slack) * b for a, b in zip(top, top[1:])),
        "batching": all(by[(t, largest)] >= by[(t, smallest)] for t in types),
        "floor": all(v >= floor for v in top),
    }


def validator_latency(repeats: int = 20) -> dict[str, float]:
    """Median wall time (ms) of each validator on the bundled fixtures."""
    chain = Chain()
    attacker_key = keygen(b"latency-attacker")
    honest = keygen(b"latency-honest")
    fx = bank_attacker_fixture(chain, attacker_key=attacker_key, is_attack=False)
    chain.fund(honest.address, 100)
    chain.execute_call(honest.address, fx["bank"], "addBalance", value=10)
    heads = [chain.register_contract(LedgerHead, label="head0"),
             chain.register_contract(AltLedgerHead, label="head1"),
             chain.register_contract(LedgerHead, label="head2")]
    withdraw = SimulatedCall(fx["bank"], chain.selector(fx["bank"], "withdraw"), (),
                             honest.address, 0, honest.address)
    deposit = SimulatedCall(heads[0], chain.selector(heads[0], "deposit"),
                            (ArgPair("amount", "1"),), honest.address, 0, honest.address)
    samples: dict[str, list[float]] = {"ecf": [], "nversion": []}
    for _ in range(repeats):
        samples["ecf"].append(ecf_check(withdraw, chain).elapsed)
        samples["nversion"].append(nversion_uniform(deposit, heads, chain).elapsed)
    return {k: 1000 * statistics.median(v) for k, v in samples.items()}


def run_bench(out_dir: str | Path | None = None, batch_sizes: Sequence[int] = BATCH_SIZES,
              types: Iterable[str] = BENCH_TYPES, concurrency: int = 4,
              with_validators: bool = True) -> dict:
    fx = bench_fixture()
    try:
        rows = bench_throughput(fx.service, fx.requests, types, batch_sizes, concurrency)
    finally:
        if fx.tmpdir is not None:
            fx.tmpdir.cleanup()
    latency = validator_latency() if with_validators else None
    doc = rows_to_json(rows, latency)
    doc["shape"] = check_shape(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "throughput.csv").write_text(rows_to_csv(rows))
        (out / "throughput.json").write_text(json.dumps(doc, indent=2))
    doc["csv"] = rows_to_csv(rows)
    return doc
