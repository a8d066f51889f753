"""Leakage-profile assertions over a completed session.

Given the provider-side ground truth (test mode only), the audit checks the
structural guarantees the protocol is supposed to give: CS2 starts with one
node record, decisions alternate by layer parity, each server sees exactly
the path's shuffled indexes, the user exchange is one-shot, every wire byte
parses through a known schema, counters match their closed forms, and no
plaintext threshold/feature-index/label bytes appear in any payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import LeakageViolation
from .model_prep import EncryptedTree
from .sharing import signed_decode
from .system import GroundTruth, ProtocolSystem, QueryResult, PREPARE_SESSION
from . import wire
from .wire import EntityId, MsgKind, TranscriptRecord


@dataclass
class AuditReport:
    session_id: bytes
    checks: dict[str, bool] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def record(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks[name] = passed
        if not passed:
            self.violations.append(f"{name}: {detail}" if detail else name)

    def raise_if_failed(self) -> None:
        if not self.ok:
            raise LeakageViolation("; ".join(self.violations))


def _parse_payload(rec: TranscriptRecord) -> None:
    """Schema-exact parse; raises if any byte is unaccounted for."""
    kind, blob = rec.kind, rec.payload
    if kind == MsgKind.PREP_TREE:
        EncryptedTree.from_bytes(blob)
    elif kind == MsgKind.PREP_ROOT:
        wire.unpack_prep_root(blob)
    elif kind == MsgKind.QUERY_SHARES:
        from .sharing import ShareVector

        ShareVector.from_bytes(blob)
    elif kind == MsgKind.UNIT_SHARES:
        wire.unpack_unit_shares(blob)
    elif kind == MsgKind.FEATURE_SHARE:
        wire.unpack_feature_share(blob)
    elif kind == MsgKind.FUNC_KEY:
        wire.unpack_func_key(blob)
    elif kind == MsgKind.PARTIAL_RESULT:
        wire.unpack_partial_result(blob)
    elif kind == MsgKind.SUBTREE:
        wire.unpack_subtree(blob)
    elif kind == MsgKind.PLAIN_INDEX:
        wire.unpack_plain_index(blob)
    elif kind in (MsgKind.SEED_CT, MsgKind.LEAF_LABEL):
        if len(blob) < 28:  # nonce + tag minimum of the AE scheme
            raise ValueError("ciphertext payload too short")
    else:  # pragma: no cover
        raise ValueError(f"unknown kind {kind}")


def leakage_audit(
    system: ProtocolSystem, result: QueryResult, ground: GroundTruth
) -> AuditReport:
    report = AuditReport(session_id=result.session_id)
    sid = result.session_id
    depth = ground.tree.depth
    records = system.transcript.session_records(sid)
    prep_records = system.transcript.session_records(PREPARE_SESSION)

    # CS2's pre-query storage is exactly the bootstrap root node.
    report.record(
        "cs2_bootstrap_single_node",
        system.cs2_pre_query_records == 1,
        f"CS2 held {system.cs2_pre_query_records} node records before queries",
    )

    # Decisions alternate: CS1 decides odd layers, CS2 even layers.
    expect_cs1 = {k for k in range(1, depth + 1) if k % 2 == 1}
    decided_cs1 = {layer for layer, _, _ in system.cs1.sessions[sid].decisions}
    decided_cs2 = {layer for layer, _, _ in system.cs2.sessions[sid].decisions}
    report.record(
        "leader_alternation",
        decided_cs1 == expect_cs1 and decided_cs2 == set(range(1, depth + 1)) - expect_cs1,
        f"CS1 decided {sorted(decided_cs1)}, CS2 decided {sorted(decided_cs2)}",
    )
    partial_receivers = [r.receiver for r in records if r.kind == MsgKind.PARTIAL_RESULT]
    report.record(
        "partial_flow_by_parity",
        partial_receivers
        == [EntityId.CS1 if k % 2 == 1 else EntityId.CS2 for k in range(1, depth + 1)],
        "partial results did not flow to the layer leader",
    )
    leaf_senders = [r.sender for r in records if r.kind == MsgKind.LEAF_LABEL]
    report.record(
        "leaf_sender_is_final_leader",
        leaf_senders == [EntityId.CS1 if depth % 2 == 1 else EntityId.CS2],
        f"leaf sent by {leaf_senders}",
    )

    # Each server reveals exactly the path's shuffled indexes.
    expected = ground.node_indexes
    for name, server in (("cs1", system.cs1), ("cs2", system.cs2)):
        revealed = server.sessions[sid].revealed
        report.record(
            f"plain_indexes_{name}",
            revealed == expected and len(revealed) == depth,
            f"{name} saw {revealed}, expected {expected}",
        )

    # One-shot user interaction.
    du_sent = [r for r in records if r.sender == EntityId.DU]
    du_recv = [r for r in records if r.receiver == EntityId.DU]
    report.record(
        "one_shot_user",
        [r.kind for r in du_sent]
        == [MsgKind.QUERY_SHARES, MsgKind.QUERY_SHARES, MsgKind.UNIT_SHARES]
        and [r.kind for r in du_recv] == [MsgKind.LEAF_LABEL],
        f"user sent {[r.kind.name for r in du_sent]}, received {[r.kind.name for r in du_recv]}",
    )

    # Counters: transcript values, log-derived values and closed forms agree.
    derived_sine = sum(1 for r in records if r.kind == MsgKind.PARTIAL_RESULT)
    derived_fe = sum(1 for r in records if r.kind == MsgKind.FUNC_KEY)
    derived_transfers = sum(1 for r in records if r.kind == MsgKind.SUBTREE)
    derived_nodes = sum(
        len(wire.unpack_subtree(r.payload)[3]) + len(wire.unpack_subtree(r.payload)[4])
        for r in records
        if r.kind == MsgKind.SUBTREE
    ) + sum(1 for r in records if r.kind == MsgKind.LEAF_LABEL)
    c = result.counters
    ok_counters = (
        c.get("sine_evaluations") == derived_sine == depth
        and c.get("fe_decryptions") == derived_fe == 2 * depth
        and c.get("subtree_transfers", 0) == derived_transfers == depth - 1
        and c.get("subtree_nodes_sent") == derived_nodes == 2 ** (depth + 1) - 2 - depth
    )
    report.record(
        "one_path_counters",
        ok_counters,
        f"counters {c}, derived sine={derived_sine} fe={derived_fe} "
        f"transfers={derived_transfers} nodes={derived_nodes}",
    )
    report.details["counters"] = dict(c)

    # Every payload parses exactly through its schema.
    schema_ok, bad = True, ""
    for rec in records + prep_records:
        try:
            _parse_payload(rec)
        except Exception as exc:  # noqa: BLE001 - any parse failure is a finding
            schema_ok, bad = False, f"{rec.kind.name}: {exc}"
            break
    report.record("wire_schema_exact", schema_ok, bad)

    # No plaintext thresholds/feature indexes/labels on the wire.
    patterns = [
        struct.pack(">II", node.feature, node.threshold)
        for node in ground.tree.internals
    ]
    patterns += [
        label.encode() for label in set(ground.tree.leaves) if len(label) >= 3
    ]
    leak = None
    for rec in records + prep_records:
        for pat in patterns:
            if pat in rec.payload:
                leak = f"pattern {pat!r} in {rec.kind.name} payload"
                break
        if leak:
            break
    report.record("no_plaintext_on_wire", leak is None, leak or "")

    # Oracle agreement and the linear-evaluation identity.
    report.record(
        "oracle_agreement",
        result.label == ground.label,
        f"protocol said {result.label!r}, oracle {ground.label!r}",
    )
    ring = system.params.ring
    identity_ok = len(result.layers) == depth
    detail = ""
    for k, layer in enumerate(result.layers):
        a, b = ground.coefficients[k]
        expect = a + b * ground.selected[k]
        got = signed_decode((layer.share_cs1 + layer.share_cs2) % ring.modulus, ring)
        if got != expect or layer.reconstructed != expect or layer.node_index != ground.node_indexes[k]:
            identity_ok = False
            detail = f"layer {layer.layer}: reconstructed {got}, expected {expect}"
            break
    report.record("linear_identity", identity_ok, detail)

    return report
