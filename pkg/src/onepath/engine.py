"""The five protocol entities as message-driven state machines over an
abstract transport, with per-edge byte accounting and leakage auditing.

Traversal works on self-contained subtrees: a shipped subtree carries only
relative structure (its own level order), never absolute positions, so the
receiver learns the next node without learning which branch produced it.
The layer-k decision is made by CS1 when k is odd and CS2 when k is even;
the decider peels the outer encryption layer off the chosen child's index,
ships the child subtree, and the peer peels the final layer.
"""

from __future__ import annotations

import random
import socket
import struct
import time
from collections import deque
from dataclasses import dataclass, field

from .errors import LeakageViolation, ParameterError, ProtocolError
from .input_share import decrypt_result, prepare_query, recover_seed
from .ipfe import ipfe_decrypt, ipfe_keyder
from .model_prep import (
    EncInternalNode,
    EncLeaf,
    EncryptedTree,
    PreparedModel,
    prepare_model,
)
from .params import KeyMaterial
from .primitives import DlogTable, PrfSeed, sample_prf_seed, ske_decrypt
from .sharing import RingParams, ShareVector, dot_mod, signed_decode
from .tree import CompleteTree, plaintext_infer
from . import wire
from .wire import EntityId, Message, MsgKind, Transcript


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------


class Scheduler:
    """In-process transport with per-(sender, receiver) in-order delivery.

    The default mode drains one global FIFO, which is fully deterministic.
    With an interleave rng the scheduler picks a random nonempty channel at
    every step, preserving per-pair order while exercising cross-pair races.
    """

    def __init__(self, transcript: Transcript, interleave_rng: random.Random | None = None):
        self.transcript = transcript
        self._entities: dict[EntityId, "Entity"] = {}
        self._fifo: deque[Message] = deque()
        self._channels: dict[tuple[EntityId, EntityId], deque[Message]] = {}
        self._interleave = interleave_rng

    def register(self, entity: "Entity") -> None:
        self._entities[entity.ident] = entity

    def send(self, msg: Message) -> None:
        if msg.sender not in self._entities or msg.receiver not in self._entities:
            raise ProtocolError(f"unknown entity on edge {msg.sender}->{msg.receiver}")
        self.transcript.log_send(msg, time.perf_counter_ns())
        self._enqueue(msg)

    def _enqueue(self, msg: Message) -> None:
        if self._interleave is None:
            self._fifo.append(msg)
        else:
            key = (msg.sender, msg.receiver)
            self._channels.setdefault(key, deque()).append(msg)

    def _next(self) -> Message | None:
        if self._interleave is None:
            return self._fifo.popleft() if self._fifo else None
        live = [k for k, q in self._channels.items() if q]
        if not live:
            return None
        return self._channels[self._interleave.choice(sorted(live))].popleft()

    def deliver(self, msg: Message) -> None:
        entity = self._entities[msg.receiver]
        t0 = time.perf_counter_ns()
        out = entity.handle(msg)
        self.transcript.add_entity_time(msg.receiver, time.perf_counter_ns() - t0)
        for m in out:
            m.depth = msg.depth + 1
            self.send(m)

    def run(self) -> None:
        while True:
            msg = self._next()
            if msg is None:
                return
            self.deliver(msg)


class SocketScheduler(Scheduler):
    """Same scheduling discipline, but every frame round-trips through an OS
    socket pair as length-prefixed bytes, so the wire encoding is exercised
    end to end."""

    def __init__(self, transcript: Transcript):
        super().__init__(transcript)
        self._rx, self._tx = socket.socketpair()

    def _enqueue(self, msg: Message) -> None:
        frame = msg.to_frame()
        self._tx.sendall(struct.pack(">II", len(frame), msg.depth) + frame)
        self._fifo.append(None)  # one pending frame marker

    def _next(self) -> Message | None:
        if not self._fifo:
            return None
        self._fifo.popleft()
        head = self._recv_exact(8)
        length, depth = struct.unpack(">II", head)
        msg = Message.from_frame(self._recv_exact(length))
        msg.depth = depth
        return msg

    def _recv_exact(self, count: int) -> bytes:
        buf = b""
        while len(buf) < count:
            chunk = self._rx.recv(count - len(buf))
            if not chunk:
                raise ProtocolError("socket transport closed early")
            buf += chunk
        return buf

    def close(self) -> None:
        self._rx.close()
        self._tx.close()


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------


class Entity:
    ident: EntityId

    def handle(self, msg: Message) -> list[Message]:
        handler = getattr(self, "_on_" + msg.kind.name.lower(), None)
        if handler is None:
            raise ProtocolError(f"{self.ident.name} cannot handle {msg.kind.name}")
        return handler(msg)

    def _msg(self, receiver: EntityId, kind: MsgKind, session: bytes, payload: bytes) -> Message:
        return Message(session, self.ident, receiver, kind, payload)


@dataclass
class HeldTree:
    """A self-contained complete subtree: `depth` internal levels in level
    order plus the leaf row.  Carries no absolute positions."""

    depth: int
    internals: list[EncInternalNode]
    leaves: list[EncLeaf]

    @property
    def root(self) -> EncInternalNode:
        return self.internals[0]

    def child(self, go_right: bool) -> "HeldTree":
        if self.depth < 2:
            raise ProtocolError("no child subtree below the final layer")
        c = 3 if go_right else 2
        internals: list[EncInternalNode] = []
        for level in range(self.depth - 1):
            start = c * (1 << level) - 1
            internals.extend(self.internals[start : start + (1 << level)])
        half = 1 << (self.depth - 1)
        leaves = self.leaves[half:] if go_right else self.leaves[:half]
        return HeldTree(self.depth - 1, internals, leaves)

    def leaf(self, go_right: bool) -> EncLeaf:
        if self.depth != 1:
            raise ProtocolError("leaf selection is only defined at the final layer")
        return self.leaves[1 if go_right else 0]

    @property
    def node_count(self) -> int:
        return len(self.internals) + len(self.leaves)


@dataclass
class ServerSession:
    shares: ShareVector
    held: HeldTree | None
    node: EncInternalNode | None
    layer: int
    plain_index: int | None = None
    pending_share: int | None = None
    unit_share: int | None = None
    own_partial: int | None = None
    peer_partial: int | None = None
    revealed: list[int] = field(default_factory=list)
    partials_log: list[tuple[int, int, int]] = field(default_factory=list)  # layer, d_i, value
    decisions: list[tuple[int, bool, int]] = field(default_factory=list)  # layer, right, R
    done: bool = False


class ServerEntity(Entity):
    def __init__(
        self,
        party: int,
        key,
        mpk,
        table: DlogTable,
        transcript: Transcript,
    ):
        self.party = party
        self.ident = EntityId.CS1 if party == 1 else EntityId.CS2
        self.peer = EntityId.CS2 if party == 1 else EntityId.CS1
        self.key = key
        self.mpk = mpk
        self.table = table
        self.transcript = transcript
        self.ring: RingParams | None = None
        self.depth: int | None = None
        self.n: int | None = None
        self.model: HeldTree | None = None  # CS1's full tree
        self.root_record: EncInternalNode | None = None  # CS2's bootstrap node
        self.root_plain_index: int | None = None
        self.sessions: dict[bytes, ServerSession] = {}

    # -- model installation ------------------------------------------------

    def _peel_index(self, ct: bytes) -> int:
        return int.from_bytes(ske_decrypt(self.key, ct), "big")

    def _on_prep_tree(self, msg: Message) -> list[Message]:
        if self.party != 1:
            raise ProtocolError("only CS1 receives the full encrypted tree")
        tree = EncryptedTree.from_bytes(msg.payload)
        tree.internals[0].fe_ct.validate(self.mpk.group)
        self.ring = RingParams(tree.ring_bits)
        self.depth, self.n = tree.depth, tree.n_features
        self.model = HeldTree(tree.depth, tree.internals, tree.leaves)
        self.root_plain_index = self._peel_index(tree.internals[0].index_ct)
        return []

    def _on_prep_root(self, msg: Message) -> list[Message]:
        if self.party != 2:
            raise ProtocolError("only CS2 receives the bootstrap root node")
        depth, n, ring, _bits, node = wire.unpack_prep_root(msg.payload)
        node.fe_ct.validate(self.mpk.group)
        self.ring, self.depth, self.n = ring, depth, n
        self.root_record = node
        self.root_plain_index = self._peel_index(node.index_ct)
        return []

    @property
    def stored_node_records(self) -> int:
        """Count of tree-node records held outside any session (the audit
        checks CS2 starts with exactly one)."""
        count = 0
        if self.model is not None:
            count += self.model.node_count
        if self.root_record is not None:
            count += 1
        return count

    # -- query flow ---------------------------------------------------------

    def _leads(self, layer: int) -> bool:
        return (layer % 2 == 1) == (self.party == 1)

    def _on_query_shares(self, msg: Message) -> list[Message]:
        if self.root_plain_index is None:
            raise ProtocolError("query received before model installation")
        shares, ring = ShareVector.from_bytes(msg.payload)
        if shares.party != self.party:
            raise ProtocolError("share bundle carries the wrong party tag")
        if ring.bits != self.ring.bits or len(shares.features) != self.n:
            raise ProtocolError("share bundle shape mismatch")
        if msg.session in self.sessions:
            raise ProtocolError("session replay")
        sess = ServerSession(
            shares=shares,
            held=self.model,
            node=self.model.root if self.party == 1 else self.root_record,
            layer=1,
            plain_index=self.root_plain_index,
        )
        sess.revealed.append(self.root_plain_index)
        self.sessions[msg.session] = sess
        return [self._feature_share(msg.session, sess)]

    def _feature_share(self, session: bytes, sess: ServerSession) -> Message:
        d_i = sess.plain_index
        value = (
            dot_mod(sess.node.masked, sess.shares.features, self.ring)
            + sess.shares.offsets[d_i - 1]
        ) % self.ring.modulus
        sess.pending_share = value
        return self._msg(
            EntityId.KGC,
            MsgKind.FEATURE_SHARE,
            session,
            wire.pack_feature_share(self.party, d_i, value, self.ring),
        )

    def _on_func_key(self, msg: Message) -> list[Message]:
        sess = self.sessions[msg.session]
        party, node_index, fk = wire.unpack_func_key(msg.payload)
        if party != self.party or node_index != sess.plain_index:
            raise ProtocolError("functional key does not match the pending node")
        if fk.y[1] != sess.pending_share:
            raise ProtocolError("functional key bound to a different share")
        if sess.unit_share is None:
            sess.unit_share = fk.y[0]
        elif sess.unit_share != fk.y[0]:
            raise ProtocolError("unit share changed mid-session")
        value = ipfe_decrypt(self.mpk, sess.node.fe_ct, fk, self.table)
        self.transcript.bump("fe_decryptions", session=msg.session)
        sess.own_partial = value
        sess.partials_log.append((sess.layer, sess.plain_index, value))
        if self._leads(sess.layer):
            return self._try_finish_layer(msg.session, sess)
        out = self._msg(
            self.peer,
            MsgKind.PARTIAL_RESULT,
            msg.session,
            wire.pack_partial_result(sess.plain_index, value),
        )
        sess.own_partial = None
        return [out]

    def _on_partial_result(self, msg: Message) -> list[Message]:
        sess = self.sessions[msg.session]
        node_index, value = wire.unpack_partial_result(msg.payload)
        if not self._leads(sess.layer):
            raise ProtocolError("partial result delivered to the non-leader")
        if node_index != sess.plain_index:
            raise ProtocolError("partial result for an unexpected node")
        sess.peer_partial = value
        return self._try_finish_layer(msg.session, sess)

    def _try_finish_layer(self, session: bytes, sess: ServerSession) -> list[Message]:
        if sess.own_partial is None or sess.peer_partial is None:
            return []
        total = signed_decode(
            (sess.own_partial + sess.peer_partial) % self.ring.modulus, self.ring
        )
        go_right = total > 1
        sess.decisions.append((sess.layer, go_right, total))
        sess.own_partial = sess.peer_partial = None
        self.transcript.bump("sine_evaluations", session=session)

        if sess.layer == self.depth:
            leaf = sess.held.leaf(go_right)
            sess.done = True
            self.transcript.bump("subtree_nodes_sent", session=session)
            return [self._msg(EntityId.DU, MsgKind.LEAF_LABEL, session, leaf.ct)]

        child = sess.held.child(go_right)
        peeled = child.root.with_index_ct(self._peel_index_raw(child.root.index_ct))
        child.internals[0] = peeled
        sess.held = child
        sess.node = peeled
        sess.layer += 1
        sess.pending_share = None
        payload = wire.pack_subtree(
            child.depth, self.n, self.ring, child.internals, child.leaves, self.mpk.group
        )
        self.transcript.bump("subtree_transfers", session=session)
        self.transcript.bump("subtree_nodes_sent", child.node_count, session=session)
        return [self._msg(self.peer, MsgKind.SUBTREE, session, payload)]

    def _peel_index_raw(self, ct: bytes) -> bytes:
        return ske_decrypt(self.key, ct)

    def _on_subtree(self, msg: Message) -> list[Message]:
        sess = self.sessions[msg.session]
        depth, n, ring, internals, leaves = wire.unpack_subtree(msg.payload)
        if n != self.n or ring.bits != self.ring.bits:
            raise ProtocolError("subtree shape mismatch")
        held = HeldTree(depth, internals, leaves)
        sess.held = held
        sess.layer += 1
        if depth != self.depth - sess.layer + 1:
            raise ProtocolError("subtree depth inconsistent with layer")
        plain = self._peel_index(held.root.index_ct)
        sess.node = held.root
        sess.plain_index = plain
        sess.revealed.append(plain)
        if not self._leads(sess.layer):
            raise ProtocolError("subtree delivered to the layer leader")
        return [
            self._msg(self.peer, MsgKind.PLAIN_INDEX, msg.session, wire.pack_plain_index(plain)),
            self._feature_share(msg.session, sess),
        ]

    def _on_plain_index(self, msg: Message) -> list[Message]:
        sess = self.sessions[msg.session]
        plain = wire.unpack_plain_index(msg.payload)
        sess.plain_index = plain
        sess.revealed.append(plain)
        if sess.node is None or len(sess.revealed) != sess.layer:
            raise ProtocolError("plain index without a pending node")
        return [self._feature_share(msg.session, sess)]


class KgcEntity(Entity):
    """Online per-query key authority: stores the unit shares, derives one
    functional key per (session, node, server), and relays the encrypted
    PRF seed to the user.  (session, node) pairs are single use."""

    ident = EntityId.KGC

    def __init__(self, keys: KeyMaterial, transcript: Transcript):
        self.fe = keys.fe
        self.transcript = transcript
        self.units: dict[bytes, tuple[int, int]] = {}
        self.used: set[tuple[bytes, int, int]] = set()
        self.pending: dict[bytes, list[Message]] = {}

    def _on_seed_ct(self, msg: Message) -> list[Message]:
        return [self._msg(EntityId.DU, MsgKind.SEED_CT, msg.session, msg.payload)]

    def _on_unit_shares(self, msg: Message) -> list[Message]:
        unit1, unit2, _ring = wire.unpack_unit_shares(msg.payload)
        self.units[msg.session] = (unit1, unit2)
        backlog = self.pending.pop(msg.session, [])
        out = []
        for queued in backlog:
            out.extend(self._derive(queued))
        return out

    def _on_feature_share(self, msg: Message) -> list[Message]:
        if msg.session not in self.units:
            self.pending.setdefault(msg.session, []).append(msg)
            return []
        return self._derive(msg)

    def _derive(self, msg: Message) -> list[Message]:
        party, node_index, value, _ring = wire.unpack_feature_share(msg.payload)
        guard = (msg.session, node_index, party)
        if guard in self.used:
            raise ProtocolError(
                f"node {node_index} already evaluated for this session/server"
            )
        self.used.add(guard)
        unit = self.units[msg.session][party - 1]
        fk = ipfe_keyder(self.fe, (unit, value))
        receiver = EntityId.CS1 if party == 1 else EntityId.CS2
        return [
            self._msg(
                receiver,
                MsgKind.FUNC_KEY,
                msg.session,
                wire.pack_func_key(party, node_index, fk, self.fe.group),
            )
        ]


class MpEntity(Entity):
    ident = EntityId.MP

    def __init__(self, keys: KeyMaterial, rng: random.Random):
        self.keys = keys
        self.rng = rng
        self.prepared: PreparedModel | None = None
        self.plain_tree: CompleteTree | None = None
        self.seed: PrfSeed | None = None

    def prepare(self, tree: CompleteTree, session: bytes) -> list[Message]:
        self.plain_tree = tree
        self.seed = sample_prf_seed(tree.gamma, self.rng)
        self.prepared = prepare_model(tree, self.keys, self.seed, self.rng)
        return self.dispatch_messages(session)

    def dispatch_messages(self, session: bytes) -> list[Message]:
        if self.prepared is None:
            raise ProtocolError("no prepared model to dispatch")
        group = self.keys.params.group
        ring = self.keys.params.ring
        tree = self.prepared.cs1_tree
        return [
            self._msg(
                EntityId.CS1, MsgKind.PREP_TREE, session, tree.to_bytes(group)
            ),
            self._msg(
                EntityId.CS2,
                MsgKind.PREP_ROOT,
                session,
                wire.pack_prep_root(
                    tree.depth,
                    tree.n_features,
                    ring,
                    self.keys.params.feature_bits,
                    self.prepared.cs2_root,
                    group,
                ),
            ),
            self._msg(EntityId.KGC, MsgKind.SEED_CT, session, self.prepared.seed_ct),
        ]


class DuEntity(Entity):
    ident = EntityId.DU

    def __init__(self, keys_sk3, ring: RingParams, feature_bits: int, rng: random.Random):
        self.sk3 = keys_sk3
        self.ring = ring
        self.feature_bits = feature_bits
        self.rng = rng
        self.gamma: int | None = None
        self.n: int | None = None
        self.seed: PrfSeed | None = None
        self._seed_ct: bytes | None = None
        self.results: dict[bytes, str] = {}
        self.sent_queries: set[bytes] = set()

    def configure(self, depth: int, n: int) -> None:
        self.gamma = (1 << depth) - 1
        self.n = n
        if self._seed_ct is not None:
            self.seed = recover_seed(self._seed_ct, self.sk3, self.gamma)

    def _on_seed_ct(self, msg: Message) -> list[Message]:
        self._seed_ct = msg.payload
        if self.gamma is not None:
            self.seed = recover_seed(msg.payload, self.sk3, self.gamma)
        return []

    def start_query(self, x: list[int]) -> tuple[bytes, list[Message]]:
        if self.seed is None:
            raise ProtocolError("user has no PRF seed yet")
        if len(x) != self.n:
            raise ParameterError("feature vector length mismatch")
        upload = prepare_query(
            x, self.seed, self.ring, self.gamma, self.rng, self.feature_bits
        )
        return self.start_query_from_upload(upload)

    def start_query_from_upload(self, upload) -> tuple[bytes, list[Message]]:
        sid = upload.session_id
        self.sent_queries.add(sid)
        return sid, [
            self._msg(
                EntityId.CS1, MsgKind.QUERY_SHARES, sid, upload.cs1.to_bytes(self.ring)
            ),
            self._msg(
                EntityId.CS2, MsgKind.QUERY_SHARES, sid, upload.cs2.to_bytes(self.ring)
            ),
            self._msg(
                EntityId.KGC,
                MsgKind.UNIT_SHARES,
                sid,
                wire.pack_unit_shares(*upload.unit_shares, self.ring),
            ),
        ]

    def _on_leaf_label(self, msg: Message) -> list[Message]:
        if msg.session not in self.sent_queries:
            raise ProtocolError("label for an unknown session")
        self.results[msg.session] = decrypt_result(msg.payload, self.sk3).decode()
        return []
