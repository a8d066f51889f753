"""Provider-side model preparation: shuffle node indexes, layer-encrypt
them, mask feature selectors with the PRF, convert thresholds to
FE-encrypted linear coefficients, and encrypt leaf labels.

The boolean test x > theta becomes the integer line R = A + B*x with
B = 2b and A = 1 - 2*b*theta for a random slope b, so that
R = 1 + 2b*(x - theta): R > 1 exactly when x > theta, and x = theta gives
R = 1 (left branch).
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .errors import ParameterError
from .ipfe import IpfeCiphertext, ipfe_encrypt
from .params import KeyMaterial, SystemParams
from .primitives import PrfSeed, prf_eval, ske_encrypt
from .sharing import RingParams
from .tree import CompleteTree

_TREE_MAGIC = b"OP1T"
_TREE_VERSION = 1

INDEX_BYTES = 4  # node indexes serialize as fixed-width big-endian


@dataclass
class ShuffledIndexMap:
    """Permutation of [1, gamma] assigned to internal nodes in level order,
    plus the provider-side inverse."""

    order: list[int]
    inverse: dict[int, int] = field(init=False)

    def __post_init__(self):
        gamma = len(self.order)
        if sorted(self.order) != list(range(1, gamma + 1)):
            raise ParameterError("index map is not a permutation of [1, gamma]")
        self.inverse = {d: pos + 1 for pos, d in enumerate(self.order)}


def fisher_yates(gamma: int, rng: random.Random) -> ShuffledIndexMap:
    """Uniform shuffle of [1, gamma] via end-to-start swaps."""
    if gamma < 1:
        raise ParameterError("gamma must be >= 1")
    arr = list(range(1, gamma + 1))
    for i in range(gamma - 1, 0, -1):
        j = rng.randint(0, i)
        arr[i], arr[j] = arr[j], arr[i]
    return ShuffledIndexMap(arr)


def linear_coefficients(theta: int, slope: int) -> tuple[int, int]:
    if slope < 1:
        raise ParameterError("slope must be >= 1")
    return 1 - 2 * slope * theta, 2 * slope


def encode_linear(
    theta: int, rng: random.Random, slope_max: int = 99
) -> tuple[int, int]:
    """Draw a random slope and return the (intercept, slope*2) pair whose
    sign behavior encodes x > theta."""
    if theta < 0:
        raise ParameterError("threshold must be nonnegative")
    return linear_coefficients(theta, rng.randint(1, slope_max))


@dataclass
class EncInternalNode:
    layer: int
    masked: list[int]  # e'_{f,n}: one-hot selector plus PRF mask, mod 2^l
    fe_ct: IpfeCiphertext
    index_ct: bytes

    def record_bytes(self, ring: RingParams, group) -> bytes:
        w = ring.entry_bytes
        body = bytearray([self.layer])
        for v in self.masked:
            body += v.to_bytes(w, "big")
        fe = self.fe_ct.to_bytes(group)
        body += struct.pack(">H", len(fe)) + fe
        body += struct.pack(">H", len(self.index_ct)) + self.index_ct
        return bytes(body)

    @classmethod
    def from_record(
        cls, blob: bytes, off: int, n: int, ring: RingParams
    ) -> tuple["EncInternalNode", int]:
        layer = blob[off]
        off += 1
        w = ring.entry_bytes
        masked = [
            int.from_bytes(blob[off + i * w : off + (i + 1) * w], "big")
            for i in range(n)
        ]
        off += n * w
        (fe_len,) = struct.unpack_from(">H", blob, off)
        fe_ct, fe_end = IpfeCiphertext.from_bytes(blob, off + 2)
        if fe_end != off + 2 + fe_len:
            raise ParameterError("FE ciphertext length mismatch in node record")
        off = fe_end
        (idx_len,) = struct.unpack_from(">H", blob, off)
        off += 2
        index_ct = blob[off : off + idx_len]
        off += idx_len
        return cls(layer, masked, fe_ct, index_ct), off

    def with_index_ct(self, index_ct: bytes) -> "EncInternalNode":
        return EncInternalNode(self.layer, self.masked, self.fe_ct, index_ct)


@dataclass
class EncLeaf:
    ct: bytes

    def record_bytes(self) -> bytes:
        return struct.pack(">H", len(self.ct)) + self.ct

    @classmethod
    def from_record(cls, blob: bytes, off: int) -> tuple["EncLeaf", int]:
        (ln,) = struct.unpack_from(">H", blob, off)
        off += 2
        return cls(blob[off : off + ln]), off + ln


@dataclass
class EncryptedTree:
    depth: int
    n_features: int
    ring_bits: int
    feature_bits: int
    a_max: int
    b_max: int
    internals: list[EncInternalNode]
    leaves: list[EncLeaf]

    @property
    def gamma(self) -> int:
        return (1 << self.depth) - 1

    def to_bytes(self, group) -> bytes:
        ring = RingParams(self.ring_bits)
        head = _TREE_MAGIC + struct.pack(
            ">BBIBBQQ",
            _TREE_VERSION,
            self.depth,
            self.n_features,
            self.ring_bits,
            self.feature_bits,
            self.a_max,
            self.b_max,
        )
        parts = [head]
        parts += [n.record_bytes(ring, group) for n in self.internals]
        parts += [leaf.record_bytes() for leaf in self.leaves]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EncryptedTree":
        if blob[:4] != _TREE_MAGIC or blob[4] != _TREE_VERSION:
            raise ParameterError("not an encrypted-tree blob")
        depth, n, ring_bits, feature_bits, a_max, b_max = struct.unpack_from(
            ">BIBBQQ", blob, 5
        )
        ring = RingParams(ring_bits)
        off = 5 + struct.calcsize(">BIBBQQ")
        internals, leaves = [], []
        for _ in range((1 << depth) - 1):
            node, off = EncInternalNode.from_record(blob, off, n, ring)
            internals.append(node)
        for _ in range(1 << depth):
            leaf, off = EncLeaf.from_record(blob, off)
            leaves.append(leaf)
        if off != len(blob):
            raise ParameterError("trailing bytes in encrypted-tree blob")
        return cls(depth, n, ring_bits, feature_bits, a_max, b_max, internals, leaves)


@dataclass
class PreparedModel:
    """Output of model preparation plus the provider-retained data
    (shuffle inverse and per-node coefficients, kept for audits; absent when
    the payloads were loaded from files rather than freshly prepared)."""

    cs1_tree: EncryptedTree
    cs2_root: EncInternalNode
    seed_ct: bytes
    shuffle: ShuffledIndexMap | None = None
    coefficients: list[tuple[int, int]] | None = None


def prepare_model(
    tree: CompleteTree,
    keys: KeyMaterial,
    seed: PrfSeed,
    rng: random.Random,
) -> PreparedModel:
    params: SystemParams = keys.params
    ring = params.ring
    gamma, n = tree.gamma, tree.n_features
    if seed.gamma != gamma:
        raise ParameterError("seed length does not match the tree's node count")
    if params.feature_bits < max(
        (node.threshold.bit_length() for node in tree.internals), default=1
    ):
        raise ParameterError("tree thresholds exceed the feature-bit width")

    shuffle = fisher_yates(gamma, rng)
    internals: list[EncInternalNode] = []
    coefficients: list[tuple[int, int]] = []
    root_ct_cs2 = None
    mpk = keys.mpk
    for pos in range(1, gamma + 1):
        node = tree.internals[pos - 1]
        d_i = shuffle.order[pos - 1]
        layer = pos.bit_length()
        a_i, b_i = encode_linear(node.threshold, rng, params.slope_max)
        coefficients.append((a_i, b_i))

        mask = prf_eval(seed, d_i, n, ring.bits)
        masked = list(mask)
        masked[node.feature - 1] = (masked[node.feature - 1] + 1) % ring.modulus

        fe_ct = ipfe_encrypt(mpk, (a_i, b_i), rng)
        idx = d_i.to_bytes(INDEX_BYTES, "big")
        if pos == 1:
            index_ct = ske_encrypt(keys.sk1, idx, rng)
            root_ct_cs2 = ske_encrypt(keys.sk2, idx, rng)
        elif layer % 2 == 1:
            index_ct = ske_encrypt(keys.sk2, ske_encrypt(keys.sk1, idx, rng), rng)
        else:
            index_ct = ske_encrypt(keys.sk1, ske_encrypt(keys.sk2, idx, rng), rng)
        internals.append(EncInternalNode(layer, masked, fe_ct, index_ct))

    leaves = [
        EncLeaf(ske_encrypt(keys.sk3, label.encode(), rng)) for label in tree.leaves
    ]
    seed_ct = ske_encrypt(keys.sk3, seed.data, rng)

    enc_tree = EncryptedTree(
        depth=tree.depth,
        n_features=n,
        ring_bits=ring.bits,
        feature_bits=params.feature_bits,
        a_max=params.a_max,
        b_max=params.b_max,
        internals=internals,
        leaves=leaves,
    )
    cs2_root = internals[0].with_index_ct(root_ct_cs2)
    return PreparedModel(enc_tree, cs2_root, seed_ct, shuffle, coefficients)
