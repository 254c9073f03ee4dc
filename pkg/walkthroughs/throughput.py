"""
Token Service throughput by token type
======================================

Batches of identical requests are pushed through the TS. One-time tokens
pay for a durable counter write on every issue, so they come last.
Pass a larger ``--max-batch`` to reproduce the full curve.
"""

import argparse

from smacs.bench import BENCH_TYPES, bench_fixture, bench_throughput, check_shape, validator_latency

parser = argparse.ArgumentParser()
parser.add_argument("--max-batch", type=int, default=1_000)
ns = parser.parse_args()

sizes = [n for n in (1, 10, 100, 1_000, 10_000, 100_000) if n <= ns.max_batch]
fx = bench_fixture()
try:
    rows = bench_throughput(fx.service, fx.requests, batch_sizes=sizes)
finally:
    fx.tmpdir.cleanup()

# one column per batch size
print(f"{'type':<18}" + "".join(f"{n:>10}" for n in sizes))
for t in BENCH_TYPES:
    print(f"{t:<18}" + "".join(f"{r.req_per_s:>10.0f}" for r in rows if r.type == t))

print("shape:", check_shape(rows))
print("validator median latency (ms):", {k: round(v, 3) for k, v in validator_latency(10).items()})
