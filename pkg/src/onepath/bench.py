"""Benchmark harness: train, prepare, run oracle-checked encrypted queries,
and report per-entity compute time, per-edge bytes and one-path counters.

Every benchmarked query is checked against the plaintext oracle; a mismatch
aborts the report (timings for wrong answers are worthless).  Time is
accumulated around entity compute sections only; the in-process transport
costs nothing and network latency is out of scope.
"""

from __future__ import annotations

import json
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import OracleMismatch
from .params import KeyMaterial, derive_params, keygen
from .system import ProtocolSystem, PREPARE_SESSION
from .tree import (
    CompleteTree,
    Quantizer,
    complete_pad,
    load_csv,
    plaintext_infer,
    quantize,
    train_cart,
)

_EDGE_GROUPS = {
    "mp_to_servers": {("MP", "CS1"), ("MP", "CS2")},
    "cs1_cs2": {("CS1", "CS2"), ("CS2", "CS1")},
    "du_servers": {
        ("DU", "CS1"),
        ("DU", "CS2"),
        ("CS1", "DU"),
        ("CS2", "DU"),
    },
    "kgc": {
        ("MP", "KGC"),
        ("DU", "KGC"),
        ("CS1", "KGC"),
        ("CS2", "KGC"),
        ("KGC", "CS1"),
        ("KGC", "CS2"),
        ("KGC", "DU"),
    },
}


@dataclass
class BenchReport:
    dataset: str
    depth: int
    n_features: int
    repetitions: int
    security_bits: int
    ring_bits: int
    feature_bits: int
    agreement_rate: float
    wall_ms: float
    prepare_bytes: int
    query_bytes_total: int
    query_bytes_avg: float
    edge_bytes: dict = field(default_factory=dict)
    edge_groups: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    entity_time_ms: dict = field(default_factory=dict)
    rounds_max: int = 0

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "depth": self.depth,
            "n_features": self.n_features,
            "repetitions": self.repetitions,
            "security_bits": self.security_bits,
            "ring_bits": self.ring_bits,
            "feature_bits": self.feature_bits,
            "agreement_rate": self.agreement_rate,
            "wall_ms": self.wall_ms,
            "communication": {
                "prepare_bytes": self.prepare_bytes,
                "query_bytes_total": self.query_bytes_total,
                "query_bytes_avg": self.query_bytes_avg,
                "edge_bytes": {f"{a}->{b}": v for (a, b), v in self.edge_bytes.items()},
                "groups": self.edge_groups,
            },
            "counters": self.counters,
            "entity_time_ms": self.entity_time_ms,
            "rounds_max": self.rounds_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        kb = 1024.0
        lines = [
            f"dataset={self.dataset}  d={self.depth}  n={self.n_features}  "
            f"reps={self.repetitions}  agreement={self.agreement_rate:.1%}",
            f"{'entity time (ms)':<24}{'MP':>10}{'Servers':>10}{'DU':>10}{'KGC':>10}",
            "{:<24}{:>10.3f}{:>10.3f}{:>10.3f}{:>10.3f}".format(
                "",
                self.entity_time_ms.get("MP", 0.0),
                self.entity_time_ms.get("CS1", 0.0) + self.entity_time_ms.get("CS2", 0.0),
                self.entity_time_ms.get("DU", 0.0),
                self.entity_time_ms.get("KGC", 0.0),
            ),
            f"{'communication (KB)':<24}{'MP->Servers':>14}{'CS1<->CS2':>12}{'DU<->Servers':>14}",
            "{:<24}{:>14.3f}{:>12.3f}{:>14.3f}".format(
                "",
                self.edge_groups.get("mp_to_servers", 0) / kb,
                self.edge_groups.get("cs1_cs2", 0) / kb,
                self.edge_groups.get("du_servers", 0) / kb,
            ),
            "counters: "
            + ", ".join(f"{k}={v}" for k, v in sorted(self.counters.items())),
        ]
        return "\n".join(lines)


def _run_queries(system: ProtocolSystem, tree: CompleteTree, xs) -> tuple[int, dict]:
    agreements = 0
    for x in xs:
        result = system.query(x)
        expect, _ = plaintext_infer(tree, x)
        if result.label != expect:
            raise OracleMismatch(
                f"query {x} produced {result.label!r}, oracle says {expect!r}"
            )
        agreements += 1
    return agreements, system.transcript.counters


def run_bench(
    data_path,
    depth: int,
    repetitions: int,
    rng: random.Random | None = None,
    security_bits: int = 112,
    ring_bits: int = 16,
    feature_bits: int = 10,
    jobs: int = 1,
    keys: KeyMaterial | None = None,
    table=None,
) -> BenchReport:
    if not 1 <= depth <= 17:
        raise ValueError("depth must be in [1, 17]")
    rng = rng or random.SystemRandom()
    t_start = time.perf_counter()

    X, y, _names = load_csv(data_path)
    quantizer = Quantizer.fit(X, feature_bits)
    plain = train_cart(X, y, depth)
    tree = complete_pad(quantize(plain, quantizer), depth)

    if keys is None:
        params = derive_params(
            security_bits=security_bits,
            ring_bits=ring_bits,
            feature_bits=feature_bits,
        )
        keys = keygen(params, rng)
    if table is None:
        table = keys.params.build_dlog_table()

    primary = ProtocolSystem(keys, rng=rng, table=table)
    primary.prepare(tree)

    xs = [
        quantizer.apply_vector(X[rng.randrange(len(X))])
        for _ in range(repetitions)
    ]
    systems = [primary]
    agreements = 0
    if repetitions:
        if jobs <= 1:
            agreements, _ = _run_queries(primary, tree, xs)
        else:
            workers = [primary]
            for _ in range(jobs - 1):
                extra = ProtocolSystem(keys, rng=rng, table=table)
                extra.install_prepared(primary.mp.prepared, tree)
                workers.append(extra)
            systems = workers
            chunks = [xs[i::jobs] for i in range(jobs)]
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [
                    pool.submit(_run_queries, system, tree, chunk)
                    for system, chunk in zip(workers, chunks)
                ]
                agreements = sum(f.result()[0] for f in futures)

    # Aggregate: prepare-phase bytes from the primary transcript, query bytes
    # summed over every query session on every worker.
    prepare_edges = primary.transcript.edge_bytes(PREPARE_SESSION)
    edge_totals: dict[tuple[str, str], int] = dict(prepare_edges)
    query_bytes = 0
    counters: dict[str, int] = {}
    entity_ms: dict[str, float] = {}
    rounds_max = 0
    for system in systems:
        for rec in system.transcript.records:
            if rec.session == PREPARE_SESSION and system is not primary:
                continue
            if rec.session != PREPARE_SESSION:
                key = (rec.sender.name, rec.receiver.name)
                edge_totals[key] = edge_totals.get(key, 0) + rec.size
                query_bytes += rec.size
                rounds_max = max(rounds_max, rec.depth)
        for name, value in system.transcript.counters.items():
            counters[name] = counters.get(name, 0) + value
        for name, ns in system.transcript.entity_time_ns.items():
            entity_ms[name] = entity_ms.get(name, 0.0) + ns / 1e6

    groups = {
        group: sum(v for k, v in edge_totals.items() if k in pairs)
        for group, pairs in _EDGE_GROUPS.items()
    }
    return BenchReport(
        dataset=str(data_path),
        depth=depth,
        n_features=tree.n_features,
        repetitions=repetitions,
        security_bits=keys.params.group.security_bits,
        ring_bits=keys.params.ring.bits,
        feature_bits=keys.params.feature_bits,
        agreement_rate=(agreements / repetitions) if repetitions else 1.0,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
        prepare_bytes=sum(prepare_edges.values()),
        query_bytes_total=query_bytes,
        query_bytes_avg=(query_bytes / repetitions) if repetitions else 0.0,
        edge_bytes=edge_totals,
        edge_groups=groups,
        counters=counters,
        entity_time_ms=entity_ms,
        rounds_max=rounds_max,
    )
