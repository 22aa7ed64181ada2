"""Scan-throughput benchmark: packed Hamming codes vs float descriptors.

Two baselines are timed against the packed-word scan over the same record
count: a per-record float linear scan with no vectorization across records
(the classic unaccelerated implementation), and a single BLAS matrix-vector
product as the fully vectorized reference. The headline ratio compares the
packed scan with the unaccelerated scan; the vectorized number is reported
alongside for context.
"""

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .hashnet import WORD_BITS
from .index import HashIndex, hamming_many


@dataclass
class ScanTiming:
    label: str
    records: int
    per_query_ms: list[float] = field(default_factory=list)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.per_query_ms) if self.per_query_ms else 0.0

    @property
    def median_ms(self) -> float:
        return statistics.median(self.per_query_ms) if self.per_query_ms else 0.0


@dataclass
class BenchReport:
    records: int
    bits: int
    dim: int
    trials: int
    hash_scan: ScanTiming
    float_scan: ScanTiming
    float_matvec: ScanTiming

    @property
    def ratio(self) -> float:
        """Unaccelerated float scan time over packed scan time."""
        return self.float_scan.mean_ms / self.hash_scan.mean_ms if self.hash_scan.mean_ms else 0.0

    @property
    def ratio_vectorized(self) -> float:
        return (
            self.float_matvec.mean_ms / self.hash_scan.mean_ms if self.hash_scan.mean_ms else 0.0
        )

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "bits": self.bits,
            "dim": self.dim,
            "trials": self.trials,
            "hash_scan_ms": {"mean": self.hash_scan.mean_ms, "median": self.hash_scan.median_ms},
            "float_scan_ms": {
                "mean": self.float_scan.mean_ms,
                "median": self.float_scan.median_ms,
            },
            "float_matvec_ms": {
                "mean": self.float_matvec.mean_ms,
                "median": self.float_matvec.median_ms,
            },
            "speedup_vs_float_scan": self.ratio,
            "speedup_vs_float_matvec": self.ratio_vectorized,
        }


def _float_linear_scan(db: np.ndarray, q: np.ndarray) -> np.ndarray:
    # One dot product per record, no cross-record vectorization.
    out = np.empty(db.shape[0], dtype=np.float64)
    for i in range(db.shape[0]):
        out[i] = np.dot(db[i], q)
    return out


def _time_ms(fn, *args, repeats: int = 3) -> float:
    # Best of a few repeats: one scan is short enough that scheduler noise
    # on small machines dominates single measurements.
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, (time.perf_counter() - t0) * 1e3)
    return best


def run_bench(
    records: int = 105_000,
    bits: int = 1024,
    dim: int = 512,
    trials: int = 5,
    seed: int = 42,
    index: HashIndex | None = None,
) -> BenchReport:
    """Time both scan flavors over `trials` random queries.

    When an index is given its global codes are scanned; synthetic codes
    are generated otherwise. Float descriptors are always synthetic since
    the index stores no float features.
    """
    rng = np.random.default_rng(seed)
    if index is not None:
        codes = index.global_words
        records = codes.shape[0]
        bits = index.bits_len
    else:
        n_words = (bits + WORD_BITS - 1) // WORD_BITS
        codes = rng.integers(0, 2**64, size=(records, n_words), dtype=np.uint64)
    n_words = codes.shape[1]

    hash_t = ScanTiming("packed hamming scan", records)
    float_t = ScanTiming("float linear scan (per record)", records)
    matvec_t = ScanTiming("float matvec (vectorized)", records)
    if records == 0:
        return BenchReport(records, bits, dim, trials, hash_t, float_t, matvec_t)

    code_queries = [rng.integers(0, 2**64, size=n_words, dtype=np.uint64) for _ in range(trials)]
    float_queries = [rng.standard_normal(dim).astype(np.float32) for _ in range(trials)]

    # Single-query latency is the quantity of interest, so BLAS is pinned to
    # one thread: spinning BLAS workers otherwise contend with the scan
    # kernel and add multi-ms jitter on small machines.
    with threadpool_limits(limits=1, user_api="blas"):
        hamming_many(codes[:1], codes[0])  # trigger kernel compilation outside timing
        # calibrate repeats so each sub-ms measurement spans a few ms of work
        est = _time_ms(hamming_many, codes, code_queries[0], repeats=1)
        hash_repeats = int(min(50, max(3, 6.0 / max(est, 1e-3))))
        for q_code in code_queries:
            hash_t.per_query_ms.append(
                _time_ms(hamming_many, codes, q_code, repeats=hash_repeats)
            )

        descriptors = rng.standard_normal((records, dim)).astype(np.float32)
        for q_float in float_queries:
            float_t.per_query_ms.append(
                _time_ms(_float_linear_scan, descriptors, q_float, repeats=2)
            )
        for q_float in float_queries:
            matvec_t.per_query_ms.append(_time_ms(np.matmul, descriptors, q_float))

    return BenchReport(records, bits, dim, trials, hash_t, float_t, matvec_t)
