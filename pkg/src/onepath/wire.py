"""Message wire format, payload codecs, and the transcript that records
every inter-entity byte for accounting and audits.

Frame layout: magic "OP1M", 16-byte session id, sender, receiver, kind,
4-byte big-endian payload length, payload.  A message's recorded size is
the payload length plus this fixed header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import ParameterError
from .ipfe import FunctionalKey
from .model_prep import EncInternalNode, EncLeaf, EncryptedTree, INDEX_BYTES
from .sharing import RingParams, ShareVector

MAGIC = b"OP1M"
HEADER_BYTES = 4 + 16 + 1 + 1 + 1 + 4


class EntityId(IntEnum):
    KGC = 1
    MP = 2
    CS1 = 3
    CS2 = 4
    DU = 5


class MsgKind(IntEnum):
    PREP_TREE = 1
    PREP_ROOT = 2
    SEED_CT = 3
    QUERY_SHARES = 4
    UNIT_SHARES = 5
    FEATURE_SHARE = 6
    FUNC_KEY = 7
    PARTIAL_RESULT = 8
    SUBTREE = 9
    PLAIN_INDEX = 10
    LEAF_LABEL = 11


@dataclass
class Message:
    session: bytes
    sender: EntityId
    receiver: EntityId
    kind: MsgKind
    payload: bytes
    depth: int = 0  # scheduler metadata, not serialized

    @property
    def size(self) -> int:
        return HEADER_BYTES + len(self.payload)

    def to_frame(self) -> bytes:
        return (
            MAGIC
            + self.session
            + bytes([self.sender, self.receiver, self.kind])
            + struct.pack(">I", len(self.payload))
            + self.payload
        )

    @classmethod
    def from_frame(cls, frame: bytes) -> "Message":
        if frame[:4] != MAGIC:
            raise ParameterError("bad message magic")
        session = frame[4:20]
        sender, receiver, kind = frame[20], frame[21], frame[22]
        (length,) = struct.unpack_from(">I", frame, 23)
        payload = frame[27 : 27 + length]
        if len(payload) != length or len(frame) != 27 + length:
            raise ParameterError("frame length mismatch")
        return cls(session, EntityId(sender), EntityId(receiver), MsgKind(kind), payload)


# ---------------------------------------------------------------------------
# Payload codecs (every wire byte parses through exactly one of these)
# ---------------------------------------------------------------------------


def pack_prep_root(depth: int, n: int, ring: RingParams, feature_bits: int,
                   root: EncInternalNode, group) -> bytes:
    return struct.pack(">BIBB", depth, n, ring.bits, feature_bits) + root.record_bytes(
        ring, group
    )


def unpack_prep_root(blob: bytes) -> tuple[int, int, RingParams, int, EncInternalNode]:
    depth, n, bits, feature_bits = struct.unpack_from(">BIBB", blob, 0)
    ring = RingParams(bits)
    node, off = EncInternalNode.from_record(blob, 7, n, ring)
    if off != len(blob):
        raise ParameterError("trailing bytes in root payload")
    return depth, n, ring, feature_bits, node


def pack_unit_shares(unit1: int, unit2: int, ring: RingParams) -> bytes:
    w = ring.entry_bytes
    return bytes([ring.bits]) + unit1.to_bytes(w, "big") + unit2.to_bytes(w, "big")


def unpack_unit_shares(blob: bytes) -> tuple[int, int, RingParams]:
    ring = RingParams(blob[0])
    w = ring.entry_bytes
    if len(blob) != 1 + 2 * w:
        raise ParameterError("bad unit-share payload length")
    return (
        int.from_bytes(blob[1 : 1 + w], "big"),
        int.from_bytes(blob[1 + w :], "big"),
        ring,
    )


def pack_feature_share(party: int, node_index: int, value: int, ring: RingParams) -> bytes:
    return struct.pack(">BIB", party, node_index, ring.bits) + value.to_bytes(
        ring.entry_bytes, "big"
    )


def unpack_feature_share(blob: bytes) -> tuple[int, int, int, RingParams]:
    party, node_index, bits = struct.unpack_from(">BIB", blob, 0)
    ring = RingParams(bits)
    if len(blob) != 6 + ring.entry_bytes:
        raise ParameterError("bad feature-share payload length")
    return party, node_index, int.from_bytes(blob[6:], "big"), ring


def pack_func_key(party: int, node_index: int, fk: FunctionalKey, group) -> bytes:
    return struct.pack(">BI", party, node_index) + fk.to_bytes(group)


def unpack_func_key(blob: bytes) -> tuple[int, int, FunctionalKey]:
    party, node_index = struct.unpack_from(">BI", blob, 0)
    fk, off = FunctionalKey.from_bytes(blob, 5)
    if off != len(blob):
        raise ParameterError("trailing bytes in functional-key payload")
    return party, node_index, fk


def pack_partial_result(node_index: int, value: int) -> bytes:
    return struct.pack(">Iq", node_index, value)


def unpack_partial_result(blob: bytes) -> tuple[int, int]:
    if len(blob) != 12:
        raise ParameterError("bad partial-result payload length")
    return struct.unpack(">Iq", blob)


def pack_plain_index(node_index: int) -> bytes:
    return node_index.to_bytes(INDEX_BYTES, "big")


def unpack_plain_index(blob: bytes) -> int:
    if len(blob) != INDEX_BYTES:
        raise ParameterError("bad plain-index payload length")
    return int.from_bytes(blob, "big")


def pack_subtree(depth: int, n: int, ring: RingParams,
                 internals: list[EncInternalNode], leaves: list[EncLeaf],
                 group) -> bytes:
    head = struct.pack(">BIBII", depth, n, ring.bits, len(internals), len(leaves))
    parts = [head]
    parts += [node.record_bytes(ring, group) for node in internals]
    parts += [leaf.record_bytes() for leaf in leaves]
    return b"".join(parts)


def unpack_subtree(blob: bytes) -> tuple[int, int, RingParams, list[EncInternalNode], list[EncLeaf]]:
    depth, n, bits, n_int, n_leaf = struct.unpack_from(">BIBII", blob, 0)
    ring = RingParams(bits)
    off = struct.calcsize(">BIBII")
    internals, leaves = [], []
    for _ in range(n_int):
        node, off = EncInternalNode.from_record(blob, off, n, ring)
        internals.append(node)
    for _ in range(n_leaf):
        leaf, off = EncLeaf.from_record(blob, off)
        leaves.append(leaf)
    if off != len(blob):
        raise ParameterError("trailing bytes in subtree payload")
    return depth, n, ring, internals, leaves


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


@dataclass
class TranscriptRecord:
    seq: int
    sender: EntityId
    receiver: EntityId
    kind: MsgKind
    session: bytes
    payload: bytes
    t_ns: int
    depth: int

    @property
    def size(self) -> int:
        return HEADER_BYTES + len(self.payload)


@dataclass
class Transcript:
    """Append-only ordered message log plus per-entity compute-time
    accumulators and derived counters.  Counters are also re-derivable from
    the log itself; audits cross-check the two."""

    records: list[TranscriptRecord] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    session_counters: dict[bytes, dict[str, int]] = field(default_factory=dict)
    entity_time_ns: dict[str, int] = field(default_factory=dict)

    def log_send(self, msg: Message, t_ns: int) -> None:
        self.records.append(
            TranscriptRecord(
                seq=len(self.records),
                sender=msg.sender,
                receiver=msg.receiver,
                kind=msg.kind,
                session=msg.session,
                payload=msg.payload,
                t_ns=t_ns,
                depth=msg.depth,
            )
        )

    def bump(self, counter: str, amount: int = 1, session: bytes | None = None) -> None:
        self.counters[counter] = self.counters.get(counter, 0) + amount
        if session is not None:
            per = self.session_counters.setdefault(session, {})
            per[counter] = per.get(counter, 0) + amount

    def add_entity_time(self, entity: EntityId, ns: int) -> None:
        key = entity.name
        self.entity_time_ns[key] = self.entity_time_ns.get(key, 0) + ns

    def edge_bytes(self, session: bytes | None = None) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for rec in self.records:
            if session is not None and rec.session != session:
                continue
            key = (rec.sender.name, rec.receiver.name)
            out[key] = out.get(key, 0) + rec.size
        return out

    def total_bytes(self, session: bytes | None = None) -> int:
        return sum(
            rec.size
            for rec in self.records
            if session is None or rec.session == session
        )

    def session_records(self, session: bytes) -> list[TranscriptRecord]:
        return [rec for rec in self.records if rec.session == session]

    @property
    def rounds(self) -> int:
        return max((rec.depth for rec in self.records), default=0)

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization: the full message log without wall
        clock timing, used for byte-for-byte reproducibility checks."""
        parts = []
        for rec in self.records:
            parts.append(
                struct.pack(">I", rec.seq)
                + rec.session
                + bytes([rec.sender, rec.receiver, rec.kind])
                + struct.pack(">I", len(rec.payload))
                + rec.payload
            )
        return b"".join(parts)

    def export_jsonl(self, include_timing: bool = True) -> str:
        lines = []
        for rec in self.records:
            doc = {
                "seq": rec.seq,
                "from": rec.sender.name,
                "to": rec.receiver.name,
                "kind": rec.kind.name,
                "bytes": rec.size,
            }
            if include_timing:
                doc["t_ns"] = rec.t_ns
            lines.append(json.dumps(doc))
        return "\n".join(lines) + "\n"
