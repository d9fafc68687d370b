"""Merkle-tree proof of storage: setup, prove, verify and the proof wire format.

Nodes are numbered breadth first from the root (node 0). The children of
node ``k`` are ``2k + 1`` and ``2k + 2``, so with ``m`` leaves the leaves sit
at ``m - 1 .. 2m - 2`` and segment ``s_i`` (1-based) hashes into node
``m + i - 2``.  Leaves are ``H(0x00 || segment)`` and internal nodes
``H(0x01 || left || right)`` with SHA-256.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

HASH_SIZE = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

PROOF_MAGIC = b"POSP"
PROOF_VERSION = 0x01

_LEAF_HASHER = hashlib.sha256(LEAF_PREFIX)


class InvalidParameter(ValueError):
    """Raised for a segment size or other setup argument out of range."""


class InvalidChallenge(ValueError):
    """Raised when a challenge number does not address a node of the tree."""


class ProofDecodeError(ValueError):
    """Raised when proof or digest bytes cannot be parsed."""


# -- node numbering ---------------------------------------------------------


def parent(k: int) -> int:
    if k <= 0:
        raise InvalidChallenge("the root has no parent")
    return (k - 1) // 2


def children(k: int) -> tuple[int, int]:
    return 2 * k + 1, 2 * k + 2


def sibling(k: int) -> int:
    if k <= 0:
        raise InvalidChallenge("the root has no sibling")
    return k - 1 if k % 2 == 0 else k + 1


def depth(k: int) -> int:
    """Level of node ``k`` (root is depth 0)."""
    return (k + 1).bit_length() - 1


def leaf_range(c: int, height: int) -> range:
    """Node numbers of the leaves under node ``c`` in a tree of ``height``."""
    span = 1 << (height - depth(c))
    first = c * span + span - 1
    return range(first, first + span)


def leaf_node(index: int, m: int) -> int:
    """Node number holding 1-based segment ``index``."""
    return m + index - 2


def _check_challenge(c: int, m: int) -> None:
    if not isinstance(c, int) or c < 0 or c > 2 * m - 2:
        raise InvalidChallenge(f"challenge {c!r} outside [0, {2 * m - 2}]")


# -- value types ------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    index: int
    data: bytes


@dataclass(frozen=True)
class Digest:
    root: bytes
    height: int

    @property
    def leaf_count(self) -> int:
        return 1 << self.height

    def to_text(self) -> str:
        return f"{self.root.hex()} {self.height}\n"

    @classmethod
    def from_text(cls, text: str) -> Digest:
        parts = text.strip().split(" ")
        if len(parts) != 2:
            raise ProofDecodeError("digest must be '<hex root> <height>'")
        try:
            root = bytes.fromhex(parts[0])
            height = int(parts[1])
        except ValueError as exc:
            raise ProofDecodeError(str(exc)) from None
        if len(root) != HASH_SIZE or height < 0 or not parts[1].isdigit():
            raise ProofDecodeError("malformed digest")
        return cls(root, height)


@dataclass(frozen=True)
class StorageProof:
    challenge: int
    siblings: tuple[tuple[int, bytes], ...]
    segments: tuple[Segment, ...]

    def encode(self) -> bytes:
        return encode_proof(self)


@dataclass(frozen=True)
class MerkleTree:
    """A fully materialized tree over zero-padded segments.

    ``nodes`` is one flat buffer of ``2m - 1`` hashes in node-number order.
    """

    nodes: bytes = field(repr=False)
    segment_size: int
    raw_segment_count: int
    padded_segment_count: int
    data: bytes = field(repr=False)

    @property
    def height(self) -> int:
        return self.padded_segment_count.bit_length() - 1

    @property
    def node_count(self) -> int:
        return len(self.nodes) // HASH_SIZE

    @property
    def digest(self) -> Digest:
        return Digest(self.node(0), self.height)

    def node(self, k: int) -> bytes:
        _check_challenge(k, self.padded_segment_count)
        return self.nodes[k * HASH_SIZE:(k + 1) * HASH_SIZE]

    def segment(self, index: int) -> Segment:
        if not 1 <= index <= self.padded_segment_count:
            raise InvalidChallenge(f"segment index {index} out of range")
        return Segment(index, segment_bytes(self.data, self.segment_size, index - 1))


# -- setup ------------------------------------------------------------------


def padded_count(raw: int) -> int:
    """Next power of two at or above ``raw`` (minimum 1)."""
    return 1 if raw <= 1 else 1 << (raw - 1).bit_length()


def _raw_count(length: int, sz: int) -> int:
    return -(-length // sz)


def segment_bytes(data: bytes, sz: int, i: int) -> bytes:
    chunk = data[i * sz:(i + 1) * sz]
    if len(chunk) < sz:
        chunk = bytes(chunk) + bytes(sz - len(chunk))
    return bytes(chunk)


def segment_data(data: bytes, sz: int) -> tuple[list[Segment], int]:
    """Split ``data`` into padded segments; also return the pre-padding count."""
    if sz < 1:
        raise InvalidParameter("segment size must be at least 1 byte")
    raw = _raw_count(len(data), sz)
    m = padded_count(raw)
    return [Segment(i + 1, segment_bytes(data, sz, i)) for i in range(m)], raw


def hash_leaves(data: bytes, sz: int) -> tuple[bytes, int, int]:
    """Hash every padded segment into one contiguous leaf level.

    Returns ``(leaf_level, raw_count, padded_count)``.
    """
    if sz < 1:
        raise InvalidParameter("segment size must be at least 1 byte")
    raw = _raw_count(len(data), sz)
    m = padded_count(raw)
    mv = memoryview(data)
    out = bytearray()
    full = len(data) // sz
    base = _LEAF_HASHER
    for i in range(full):
        h = base.copy()
        h.update(mv[i * sz:(i + 1) * sz])
        out += h.digest()
    if full < raw:
        h = base.copy()
        h.update(segment_bytes(data, sz, full))
        out += h.digest()
    if m > raw:
        h = base.copy()
        h.update(bytes(sz))
        out += h.digest() * (m - raw)
    return bytes(out), raw, m


def fold_level(level: bytes) -> bytes:
    """Hash adjacent pairs of a level into the level above it."""
    sha = hashlib.sha256
    mv = memoryview(level)
    return b"".join(
        [sha(NODE_PREFIX + mv[i:i + 2 * HASH_SIZE]).digest() for i in range(0, len(level), 2 * HASH_SIZE)]
    )


def build_levels(leaves: bytes) -> list[bytes]:
    """All levels, root first, from a power-of-two leaf level."""
    levels = [leaves]
    while len(levels[-1]) > HASH_SIZE:
        levels.append(fold_level(levels[-1]))
    levels.reverse()
    return levels


def setup(data: bytes, sz: int) -> tuple[Digest, MerkleTree]:
    data = bytes(data)
    leaves, raw, m = hash_leaves(data, sz)
    tree = MerkleTree(b"".join(build_levels(leaves)), sz, raw, m, data)
    return tree.digest, tree


# -- prove / verify ---------------------------------------------------------


def _path_siblings(c: int, node_of) -> tuple[tuple[int, bytes], ...]:
    out = []
    k = c
    while k > 0:
        s = sibling(k)
        out.append((s, node_of(s)))
        k = parent(k)
    return tuple(out)


def prove(source: MerkleTree | bytes, c: int, sz: int | None = None) -> StorageProof:
    """Build the proof for node ``c``.

    ``source`` is either a built tree or raw data; raw data needs ``sz`` and
    the tree is rebuilt first.
    """
    if not isinstance(source, MerkleTree):
        if sz is None:
            raise InvalidParameter("segment size required when proving from raw data")
        _, source = setup(source, sz)
    tree = source
    m = tree.padded_segment_count
    _check_challenge(c, m)
    segments = tuple(tree.segment(k - m + 2) for k in leaf_range(c, tree.height))
    return StorageProof(c, _path_siblings(c, tree.node), segments)


def path_from_leaves(leaves: bytes, c: int) -> tuple[tuple[int, bytes], ...]:
    """Sibling path for ``c`` recomputed from a leaf level alone.

    Used by the benchmark to time path generation without a cached tree.
    """
    levels = build_levels(leaves)
    m = len(leaves) // HASH_SIZE
    _check_challenge(c, m)

    def node_of(k: int) -> bytes:
        lvl = levels[depth(k)]
        off = (k - ((1 << depth(k)) - 1)) * HASH_SIZE
        return lvl[off:off + HASH_SIZE]

    return _path_siblings(c, node_of)


def _structure_ok(d: Digest, c: int, proof: StorageProof) -> bool:
    m = d.leaf_count
    if proof.challenge != c or not 0 <= c <= 2 * m - 2:
        return False
    if len(proof.siblings) != depth(c):
        return False
    k = c
    for node_number, value in proof.siblings:
        if node_number != sibling(k) or len(value) != HASH_SIZE:
            return False
        k = parent(k)
    leaves = leaf_range(c, d.height)
    if len(proof.segments) != len(leaves):
        return False
    expected = [k - m + 2 for k in leaves]
    if [s.index for s in proof.segments] != expected:
        return False
    size = len(proof.segments[0].data)
    return all(len(s.data) == size for s in proof.segments)


def verify(d: Digest, c: int, proof: StorageProof) -> bool:
    """Accept iff the proof is well formed and folds up to ``d.root``."""
    if d.height < 0 or not _structure_ok(d, c, proof):
        return False
    level = b""
    for seg in proof.segments:
        h = _LEAF_HASHER.copy()
        h.update(seg.data)
        level += h.digest()
    while len(level) > HASH_SIZE:
        level = fold_level(level)
    k = c
    for node_number, value in proof.siblings:
        pair = level + value if k % 2 == 1 else value + level
        level = hashlib.sha256(NODE_PREFIX + pair).digest()
        k = parent(k)
    return level == d.root


# -- wire format ------------------------------------------------------------


def encode_proof(proof: StorageProof) -> bytes:
    out = bytearray(PROOF_MAGIC)
    out.append(PROOF_VERSION)
    out += struct.pack(">QH", proof.challenge, len(proof.siblings))
    for node_number, value in proof.siblings:
        if len(value) != HASH_SIZE:
            raise ValueError("sibling hash must be 32 bytes")
        out += struct.pack(">Q", node_number) + value
    out += struct.pack(">I", len(proof.segments))
    for seg in proof.segments:
        out += struct.pack(">QI", seg.index, len(seg.data)) + seg.data
    return bytes(out)


def decode_proof(blob: bytes) -> StorageProof:
    mv = memoryview(blob)
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(mv):
            raise ProofDecodeError("truncated proof")
        chunk = bytes(mv[pos:pos + n])
        pos += n
        return chunk

    if take(4) != PROOF_MAGIC:
        raise ProofDecodeError("bad magic")
    if take(1)[0] != PROOF_VERSION:
        raise ProofDecodeError("unsupported proof version")
    challenge, n_sib = struct.unpack(">QH", take(10))
    siblings = []
    for _ in range(n_sib):
        (node_number,) = struct.unpack(">Q", take(8))
        siblings.append((node_number, take(HASH_SIZE)))
    (n_seg,) = struct.unpack(">I", take(4))
    segments = []
    for _ in range(n_seg):
        index, length = struct.unpack(">QI", take(12))
        segments.append(Segment(index, take(length)))
    if pos != len(mv):
        raise ProofDecodeError("trailing bytes after proof")
    return StorageProof(challenge, tuple(siblings), tuple(segments))

