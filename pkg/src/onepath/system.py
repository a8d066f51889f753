"""Orchestration of a full deployment: one key authority, one provider, two
servers and one user wired over a scheduler, with ground-truth retention for
audits and tests."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

from .engine import (
    DuEntity,
    KgcEntity,
    MpEntity,
    Scheduler,
    ServerEntity,
    SocketScheduler,
)
from .errors import ProtocolError
from .params import KeyMaterial
from .primitives import DlogTable
from .tree import CompleteTree, PredictionPath, plaintext_infer
from .wire import EntityId, Transcript

PREPARE_SESSION = bytes(16)


@dataclass
class LayerEval:
    layer: int
    node_index: int
    leader: EntityId
    share_cs1: int
    share_cs2: int
    reconstructed: int
    went_right: bool


@dataclass
class QueryResult:
    session_id: bytes
    label: str
    counters: dict[str, int]
    layers: list[LayerEval]


@dataclass
class GroundTruth:
    """Provider-side view of one query, used only by audits and tests."""

    tree: CompleteTree
    x: list[int]
    label: str
    path: PredictionPath
    positions: tuple[int, ...]
    node_indexes: list[int]  # shuffled index of each path node, root first
    coefficients: list[tuple[int, int]]  # (A, B) of each path node
    selected: list[int]  # x_{f_i} of each path node


def _child_rng(rng: random.Random | None) -> random.Random:
    if rng is None:
        return random.SystemRandom()
    return random.Random(rng.getrandbits(64))


class ProtocolSystem:
    def __init__(
        self,
        keys: KeyMaterial,
        rng: random.Random | None = None,
        table: DlogTable | None = None,
        interleave_rng: random.Random | None = None,
        socket_transport: bool = False,
    ):
        self.keys = keys
        self.params = keys.params
        self.transcript = Transcript()
        if socket_transport:
            self.scheduler: Scheduler = SocketScheduler(self.transcript)
        else:
            self.scheduler = Scheduler(self.transcript, interleave_rng)
        self.table = table if table is not None else keys.params.build_dlog_table()

        mpk = keys.mpk
        self.kgc = KgcEntity(keys, self.transcript)
        self.mp = MpEntity(keys, _child_rng(rng))
        self.cs1 = ServerEntity(1, keys.sk1, mpk, self.table, self.transcript)
        self.cs2 = ServerEntity(2, keys.sk2, mpk, self.table, self.transcript)
        self.du = DuEntity(keys.sk3, keys.params.ring, keys.params.feature_bits, _child_rng(rng))
        for entity in (self.kgc, self.mp, self.cs1, self.cs2, self.du):
            self.scheduler.register(entity)
        self.cs2_pre_query_records: int | None = None

    # -- phases --------------------------------------------------------------

    def prepare(self, tree: CompleteTree) -> None:
        self.du.configure(tree.depth, tree.n_features)
        t0 = time.perf_counter_ns()
        msgs = self.mp.prepare(tree, PREPARE_SESSION)
        self.transcript.add_entity_time(EntityId.MP, time.perf_counter_ns() - t0)
        self._run_prepare(msgs)

    def install_prepared(self, prepared, plain_tree: CompleteTree | None = None) -> None:
        """Install an already-prepared model (e.g. loaded from files) without
        re-running the provider-side encryption."""
        self.mp.prepared = prepared
        self.mp.plain_tree = plain_tree
        tree = prepared.cs1_tree
        self.du.configure(tree.depth, tree.n_features)
        self._run_prepare(self.mp.dispatch_messages(PREPARE_SESSION))

    def _run_prepare(self, msgs) -> None:
        for m in msgs:
            m.depth = 1
            self.scheduler.send(m)
        self.scheduler.run()
        self.cs2_pre_query_records = self.cs2.stored_node_records

    def query(self, x: list[int]) -> QueryResult:
        t0 = time.perf_counter_ns()
        sid, msgs = self.du.start_query(x)
        self.transcript.add_entity_time(EntityId.DU, time.perf_counter_ns() - t0)
        return self._run_query(sid, msgs)

    def query_upload(self, upload) -> QueryResult:
        """Run a query from a pre-built share upload (the offline-user flow:
        shares prepared earlier, possibly on another machine)."""
        sid, msgs = self.du.start_query_from_upload(upload)
        return self._run_query(sid, msgs)

    def _run_query(self, sid: bytes, msgs) -> QueryResult:
        for m in msgs:
            m.depth = 1
            self.scheduler.send(m)
        self.scheduler.run()
        if sid not in self.du.results:
            raise ProtocolError("traversal did not deliver a label")
        return QueryResult(
            session_id=sid,
            label=self.du.results[sid],
            counters=dict(self.transcript.session_counters.get(sid, {})),
            layers=self._collect_layers(sid),
        )

    def _collect_layers(self, sid: bytes) -> list[LayerEval]:
        s1 = self.cs1.sessions[sid]
        s2 = self.cs2.sessions[sid]
        decisions = {layer: (right, total) for layer, right, total in s1.decisions}
        decisions.update({layer: (right, total) for layer, right, total in s2.decisions})
        log1 = {layer: (d_i, v) for layer, d_i, v in s1.partials_log}
        log2 = {layer: (d_i, v) for layer, d_i, v in s2.partials_log}
        out = []
        for layer in sorted(decisions):
            d1, v1 = log1[layer]
            d2, v2 = log2[layer]
            if d1 != d2:
                raise ProtocolError("servers evaluated different nodes")
            right, total = decisions[layer]
            out.append(
                LayerEval(
                    layer=layer,
                    node_index=d1,
                    leader=EntityId.CS1 if layer % 2 == 1 else EntityId.CS2,
                    share_cs1=v1,
                    share_cs2=v2,
                    reconstructed=total,
                    went_right=right,
                )
            )
        return out

    # -- test/audit support ----------------------------------------------------

    def ground_truth(self, x: list[int]) -> GroundTruth:
        prepared = self.mp.prepared
        tree = self.mp.plain_tree
        if prepared is None or tree is None:
            raise ProtocolError("no prepared model")
        if prepared.shuffle is None or prepared.coefficients is None:
            raise ProtocolError("provider state not retained; ground truth unavailable")
        label, path = plaintext_infer(tree, x)
        positions = path.positions
        return GroundTruth(
            tree=tree,
            x=list(x),
            label=label,
            path=path,
            positions=positions,
            node_indexes=[prepared.shuffle.order[p - 1] for p in positions],
            coefficients=[prepared.coefficients[p - 1] for p in positions],
            selected=[x[tree.internals[p - 1].feature - 1] for p in positions],
        )

    def audit_query(self, x: list[int]):
        from .audit import leakage_audit

        result = self.query(x)
        report = leakage_audit(self, result, self.ground_truth(x))
        return result, report
