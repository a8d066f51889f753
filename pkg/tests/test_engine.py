import random

import pytest

from onepath.errors import ProtocolError
from onepath.engine import HeldTree
from onepath.model_prep import EncLeaf, EncInternalNode
from onepath.system import ProtocolSystem
from onepath.tree import CompleteTree, InternalNode, plaintext_infer, random_complete_tree
from onepath.wire import EntityId, Message, MsgKind


def make_system(keys112, dlog_table, seed=1, **kwargs):
    return ProtocolSystem(keys112, rng=random.Random(seed), table=dlog_table, **kwargs)


class PinnedSlopeRng(random.Random):
    """randint (used only for the slope draw on depth-1 trees) returns a
    fixed value; everything else stays pseudorandom."""

    def __new__(cls, seed, slope):
        return super().__new__(cls, seed)

    def __init__(self, seed, slope):
        super().__init__(seed)
        self._slope = slope

    def randint(self, a, b):
        return self._slope


def pinned_slope_system(keys, table, seed, slope):
    system = ProtocolSystem(keys, rng=random.Random(seed), table=table)
    system.mp.rng = PinnedSlopeRng(seed, slope)
    return system


class TestDepthOne:
    def test_boundary_threshold_zero(self, keys112, dlog_table):
        # theta=0, b=1: x=0 gives R=1 (left), x=1 gives R=3 (right)
        tree = CompleteTree(1, 2, [InternalNode(1, 0)], ["left", "right"])
        system = pinned_slope_system(keys112, dlog_table, seed=3, slope=1)
        system.prepare(tree)
        low = system.query([0, 5])
        assert low.label == "left"
        assert low.layers[0].reconstructed == 1
        high = system.query([1, 5])
        assert high.label == "right"
        assert high.layers[0].reconstructed == 3

    def test_worked_slope_two(self, keys112, dlog_table):
        # theta=5, b=2: x=6 gives R=5 > 1 -> right
        tree = CompleteTree(1, 1, [InternalNode(1, 5)], ["left", "right"])
        system = pinned_slope_system(keys112, dlog_table, seed=4, slope=2)
        system.prepare(tree)
        res = system.query([6])
        assert res.label == "right" and res.layers[0].reconstructed == 5

    def test_degenerate_traversal_counters(self, keys112, dlog_table):
        tree = CompleteTree(1, 3, [InternalNode(2, 7)], ["a", "b"])
        system = make_system(keys112, dlog_table)
        system.prepare(tree)
        res = system.query([1, 9, 3])
        assert res.counters["sine_evaluations"] == 1
        assert res.counters["fe_decryptions"] == 2
        assert res.counters.get("subtree_transfers", 0) == 0
        assert res.counters["subtree_nodes_sent"] == 1  # the delivered leaf
        assert res.layers[0].leader == EntityId.CS1


class TestDepthThree:
    @pytest.fixture()
    def system3(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table, seed=7)
        system.prepare(random_complete_tree(3, 13, 10, random.Random(21)))
        return system

    def test_alternating_leadership(self, system3, rng):
        x = [rng.randrange(1 << 10) for _ in range(13)]
        res = system3.query(x)
        assert [layer.leader for layer in res.layers] == [
            EntityId.CS1,
            EntityId.CS2,
            EntityId.CS1,
        ]
        cs1_decided = {l for l, _, _ in system3.cs1.sessions[res.session_id].decisions}
        cs2_decided = {l for l, _, _ in system3.cs2.sessions[res.session_id].decisions}
        assert cs1_decided == {1, 3} and cs2_decided == {2}

    def test_oracle_and_audit(self, system3, rng):
        for _ in range(5):
            x = [rng.randrange(1 << 10) for _ in range(13)]
            res, report = system3.audit_query(x)
            assert report.ok, report.violations
            assert res.label == system3.ground_truth(x).label

    def test_counters_match_closed_forms(self, system3, rng):
        res = system3.query([rng.randrange(1 << 10) for _ in range(13)])
        assert res.counters["sine_evaluations"] == 3
        assert res.counters["fe_decryptions"] == 6
        assert res.counters["subtree_transfers"] == 2
        assert res.counters["subtree_nodes_sent"] == 2**4 - 2 - 3


class TestRandomTreesOracle:
    def test_many_depths(self, keys112, dlog_table):
        rng = random.Random(5150)
        system_rng = random.Random(88)
        for depth in (2, 3, 4, 5, 6):
            tree = random_complete_tree(depth, rng.randint(2, 8), 10, rng)
            system = ProtocolSystem(keys112, rng=system_rng, table=dlog_table)
            system.prepare(tree)
            for _ in range(3):
                x = [rng.randrange(1 << 10) for _ in range(tree.n_features)]
                res = system.query(x)
                oracle_label, _ = plaintext_infer(tree, x)
                assert res.label == oracle_label
                assert res.counters["sine_evaluations"] == depth
                assert res.counters["subtree_nodes_sent"] == 2 ** (depth + 1) - 2 - depth


class TestLinearIdentity:
    def test_reconstruction_equals_linear_form(self, keys112, dlog_table, rng):
        system = make_system(keys112, dlog_table, seed=11)
        tree = random_complete_tree(4, 5, 10, random.Random(3))
        system.prepare(tree)
        x = [rng.randrange(1 << 10) for _ in range(5)]
        res = system.query(x)
        gt = system.ground_truth(x)
        assert len(res.layers) == 4
        for k, layer in enumerate(res.layers):
            a, b = gt.coefficients[k]
            assert layer.reconstructed == a + b * gt.selected[k]
            assert layer.node_index == gt.node_indexes[k]


class TestSchedulerAndTransport:
    def test_interleaved_sessions_complete(self, keys112, dlog_table):
        # Many sessions progress under a randomized cross-pair schedule; the
        # per-pair FIFO guarantee is enough for every one to finish right.
        system = ProtocolSystem(
            keys112,
            rng=random.Random(2),
            table=dlog_table,
            interleave_rng=random.Random(77),
        )
        tree = random_complete_tree(2, 4, 10, random.Random(9))
        system.prepare(tree)
        rng = random.Random(31)
        queries = []
        t0 = 0
        for _ in range(40):
            x = [rng.randrange(1 << 10) for _ in range(4)]
            sid, msgs = system.du.start_query(x)
            for m in msgs:
                m.depth = 1
                system.scheduler.send(m)
            queries.append((sid, x))
        system.scheduler.run()
        for sid, x in queries:
            assert system.du.results[sid] == plaintext_infer(tree, x)[0]

    def test_unknown_entity_rejected(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table)
        bad = Message(bytes(16), 99, EntityId.DU, MsgKind.SEED_CT, b"x" * 40)
        with pytest.raises(ProtocolError):
            system.scheduler.send(bad)

    def test_byte_accounting_is_header_plus_payload(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table)
        tree = random_complete_tree(1, 2, 10, random.Random(1))
        system.prepare(tree)
        for rec in system.transcript.records:
            assert rec.size == 27 + len(rec.payload)

    def test_socket_transport_reuses_identical_bytes(self, keys112, dlog_table):
        tree = random_complete_tree(2, 3, 10, random.Random(12))
        x = [100, 900, 512]

        plain = make_system(keys112, dlog_table, seed=5)
        plain.prepare(tree)
        plain.query(x)

        socketed = ProtocolSystem(
            keys112, rng=random.Random(5), table=dlog_table, socket_transport=True
        )
        socketed.prepare(tree)
        socketed.query(x)
        socketed.scheduler.close()

        assert (
            plain.transcript.canonical_bytes() == socketed.transcript.canonical_bytes()
        )


class TestDeterminism:
    def test_fixed_seed_fixes_transcript(self, keys112, dlog_table):
        tree = random_complete_tree(3, 6, 10, random.Random(14))
        x = [17, 512, 98, 1000, 3, 640]
        transcripts = []
        for _ in range(2):
            system = make_system(keys112, dlog_table, seed=1234)
            system.prepare(tree)
            system.query(x)
            transcripts.append(system.transcript.canonical_bytes())
        assert transcripts[0] == transcripts[1]

    def test_different_seeds_differ(self, keys112, dlog_table):
        tree = random_complete_tree(2, 3, 10, random.Random(14))
        x = [1, 2, 3]
        blobs = []
        for seed in (1, 2):
            system = make_system(keys112, dlog_table, seed=seed)
            system.prepare(tree)
            system.query(x)
            blobs.append(system.transcript.canonical_bytes())
        assert blobs[0] != blobs[1]


class TestProtocolViolations:
    def test_kgc_rejects_node_replay(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table)
        tree = random_complete_tree(2, 3, 10, random.Random(4))
        system.prepare(tree)
        res = system.query([5, 6, 7])
        # Re-submitting a feature share for an already-evaluated node fails.
        rec = next(
            r
            for r in system.transcript.session_records(res.session_id)
            if r.kind == MsgKind.FEATURE_SHARE
        )
        replay = Message(res.session_id, rec.sender, EntityId.KGC, rec.kind, rec.payload)
        with pytest.raises(ProtocolError, match="already evaluated"):
            system.kgc.handle(replay)

    def test_query_before_model_rejected(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table)
        with pytest.raises(ProtocolError):
            system.du.configure(2, 3)
            sid, msgs = system.du.start_query([1, 2, 3])
            for m in msgs:
                system.scheduler.send(m)
            system.scheduler.run()

    def test_session_replay_rejected(self, keys112, dlog_table):
        system = make_system(keys112, dlog_table)
        tree = random_complete_tree(1, 2, 10, random.Random(4))
        system.prepare(tree)
        res = system.query([5, 6])
        rec = next(
            r
            for r in system.transcript.session_records(res.session_id)
            if r.kind == MsgKind.QUERY_SHARES and r.receiver == EntityId.CS1
        )
        with pytest.raises(ProtocolError, match="replay"):
            system.cs1.handle(
                Message(res.session_id, EntityId.DU, EntityId.CS1, rec.kind, rec.payload)
            )


class TestHeldTree:
    def _tree(self, depth):
        internals = [
            EncInternalNode(layer=(i + 1).bit_length(), masked=[i], fe_ct=None, index_ct=b"")
            for i in range((1 << depth) - 1)
        ]
        leaves = [EncLeaf(bytes([i])) for i in range(1 << depth)]
        return HeldTree(depth, internals, leaves)

    def test_child_extraction(self):
        held = self._tree(3)
        left = held.child(False)
        assert [n.masked[0] for n in left.internals] == [1, 3, 4]
        assert [l.ct[0] for l in left.leaves] == [0, 1, 2, 3]
        right = held.child(True)
        assert [n.masked[0] for n in right.internals] == [2, 5, 6]
        assert [l.ct[0] for l in right.leaves] == [4, 5, 6, 7]

    def test_node_count_formula(self):
        for depth in (1, 2, 5):
            assert self._tree(depth).node_count == 2 ** (depth + 1) - 1

    def test_leaf_only_at_final_layer(self):
        held = self._tree(2)
        with pytest.raises(ProtocolError):
            held.leaf(True)
        assert held.child(True).leaf(False).ct == bytes([2])


class TestAuditDetectsViolations:
    def test_planted_plaintext_pattern_flagged(self, keys112, dlog_table):
        import struct

        from onepath.audit import leakage_audit

        system = make_system(keys112, dlog_table)
        tree = random_complete_tree(2, 3, 10, random.Random(8))
        system.prepare(tree)
        x = [4, 700, 31]
        result = system.query(x)
        node = tree.internals[0]
        evil = Message(
            result.session_id,
            EntityId.CS1,
            EntityId.CS2,
            MsgKind.PLAIN_INDEX,
            struct.pack(">II", node.feature, node.threshold),
        )
        system.transcript.log_send(evil, 0)
        report = leakage_audit(system, result, system.ground_truth(x))
        assert not report.ok
        assert any("no_plaintext_on_wire" in v for v in report.violations)
        with pytest.raises(Exception):
            report.raise_if_failed()
