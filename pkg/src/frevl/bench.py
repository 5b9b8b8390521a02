"""Latency/throughput benchmark for the eval-mode forward pass.

Wall-clock timing with warmup iterations and percentile reporting. Batch
generation happens outside the timed region; only the forward pass is
measured.
"""

from __future__ import annotations

import json
import resource
import time
from dataclasses import asdict, dataclass

import numpy as np

from .kernel import RngState, fnv1a64
from .model import AblationFlags, FusionConfig, forward_batch


@dataclass(frozen=True)
class BenchReport:
    batch_size: int
    iterations: int
    warmup_iterations: int
    latency_ms: dict  # {"p50": ..., "p90": ..., "p99": ...}
    throughput_pairs_per_s: float
    peak_rss_bytes: int
    config_hash: str


def config_hash(config: FusionConfig, flags: AblationFlags) -> str:
    blob = json.dumps([asdict(config), asdict(flags)],
                      sort_keys=True).encode()
    return f"{fnv1a64(blob):016x}"


def _random_unit_batch(gen, n, d):
    x = gen.standard_normal((n, d)).astype(np.float32)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def bench_forward(params, config: FusionConfig,
                  flags: AblationFlags = AblationFlags(),
                  batch_size: int = 32, iterations: int = 100,
                  warmup: int = 10, seed: int = 0) -> BenchReport:
    if iterations < 30:
        raise ValueError("iterations must be >= 30")
    if warmup < 5:
        raise ValueError("warmup must be >= 5")
    gen = RngState(seed).generator()
    # A small pool of pre-generated batches, cycled during timing.
    pool = [( _random_unit_batch(gen, batch_size, config.d_v),
              _random_unit_batch(gen, batch_size, config.d_t))
            for _ in range(4)]
    for i in range(warmup):
        V, T = pool[i % len(pool)]
        forward_batch(V, T, params, config, flags, training=False)
    times = np.empty(iterations)
    for i in range(iterations):
        V, T = pool[i % len(pool)]
        t0 = time.perf_counter()
        forward_batch(V, T, params, config, flags, training=False)
        times[i] = time.perf_counter() - t0
    p50, p90, p99 = np.percentile(times, [50, 90, 99]) * 1000.0
    total = float(times.sum())
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    return BenchReport(
        batch_size=batch_size,
        iterations=iterations,
        warmup_iterations=warmup,
        latency_ms={"p50": float(p50), "p90": float(p90), "p99": float(p99)},
        throughput_pairs_per_s=batch_size * iterations / total,
        peak_rss_bytes=int(peak),
        config_hash=config_hash(config, flags),
    )


def emit_report(report, fmt: str = "text") -> str:
    """Serialize a BenchReport or a metrics history. Stable field ordering:
    the same report always serializes to the same bytes."""
    if fmt == "json-lines":
        if isinstance(report, BenchReport):
            return json.dumps(asdict(report), sort_keys=True) + "\n"
        return "".join(json.dumps(row, sort_keys=True) + "\n"
                       for row in report)
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(report, BenchReport):
        rows = [
            ("batch_size", report.batch_size),
            ("iterations", report.iterations),
            ("warmup_iterations", report.warmup_iterations),
            ("latency_p50_ms", f"{report.latency_ms['p50']:.4f}"),
            ("latency_p90_ms", f"{report.latency_ms['p90']:.4f}"),
            ("latency_p99_ms", f"{report.latency_ms['p99']:.4f}"),
            ("throughput_pairs_per_s",
             f"{report.throughput_pairs_per_s:.2f}"),
            ("peak_rss_bytes", report.peak_rss_bytes),
            ("config_hash", report.config_hash),
        ]
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k:<{width}}  {v}\n" for k, v in rows)
    # metrics history: aligned table
    if not report:
        return ""
    cols = list(report[0].keys())
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for row in report:
        lines.append("  ".join(
            f"{row[c]:>12.6g}" if isinstance(row[c], float)
            else f"{row[c]:>12}" for c in cols))
    return "\n".join(lines) + "\n"
