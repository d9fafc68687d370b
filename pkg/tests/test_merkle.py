import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsnmech import merkle
from dsnmech.merkle import (
    Digest,
    InvalidChallenge,
    InvalidParameter,
    ProofDecodeError,
    Segment,
    StorageProof,
    decode_proof,
    encode_proof,
    prove,
    setup,
    verify,
)
from oracles import H, naive_leaves_under, naive_nodes, naive_path_siblings, naive_root, naive_segments


@pytest.fixture(scope="module")
def eight_leaf():
    data = os.urandom(8 * 64)
    d, tree = setup(data, 64)
    return data, d, tree


# -- segmentation -----------------------------------------------------------


def test_ten_mb_at_128kb_has_80_segments_height_7():
    size, sz = 10 * 1024 * 1024, 128 * 1024
    segs, raw = merkle.segment_data(bytes(size), sz)
    assert raw == 80
    assert len(segs) == 128
    assert setup(bytes(size), sz)[0].height == 7


def test_empty_data_is_one_zero_segment():
    segs, raw = merkle.segment_data(b"", 1024)
    assert raw == 0
    assert segs == [Segment(1, bytes(1024))]
    d, tree = setup(b"", 1024)
    assert d.height == 0
    assert d.root == H(b"\x00" + bytes(1024))


def test_5000_bytes_pads_last_segment_and_count():
    data = os.urandom(5000)
    segs, raw = merkle.segment_data(data, 1024)
    assert raw == 5
    assert len(segs) == 8
    assert segs[4].data == data[4096:] + bytes(120)
    assert all(s.data == bytes(1024) for s in segs[5:])
    assert [s.index for s in segs] == list(range(1, 9))


def test_zero_segment_size_rejected():
    with pytest.raises(InvalidParameter):
        merkle.segment_data(b"abc", 0)
    with pytest.raises(InvalidParameter):
        setup(b"abc", 0)


# -- numbering algebra ------------------------------------------------------


@given(st.integers(min_value=1, max_value=10**9))
def test_numbering_algebra(k):
    assert merkle.parent(k) == (k - 1) // 2
    assert k in merkle.children(merkle.parent(k))
    assert merkle.sibling(merkle.sibling(k)) == k
    assert merkle.parent(merkle.sibling(k)) == merkle.parent(k)
    assert merkle.depth(k) == (k + 1).bit_length() - 1


def test_root_has_no_parent_or_sibling():
    with pytest.raises(InvalidChallenge):
        merkle.parent(0)
    with pytest.raises(InvalidChallenge):
        merkle.sibling(0)


# -- setup ------------------------------------------------------------------


def test_eight_segments_tree_shape(eight_leaf):
    _, d, tree = eight_leaf
    assert tree.node_count == 15
    assert d.height == 3
    assert tree.padded_segment_count == 8
    # segment s_i lives at node m + i - 2
    for i in range(1, 9):
        assert tree.node(merkle.leaf_node(i, 8)) == H(b"\x00" + tree.segment(i).data)
    assert merkle.leaf_node(2, 8) == 8


def test_four_segments_straight_line_root():
    segs = [os.urandom(32) for _ in range(4)]
    l = [H(b"\x00" + s) for s in segs]
    expected = H(b"\x01" + H(b"\x01" + l[0] + l[1]) + H(b"\x01" + l[2] + l[3]))
    d, tree = setup(b"".join(segs), 32)
    assert d.root == expected
    assert d.height == 2


def test_single_segment_root():
    seg = os.urandom(100)
    d, _ = setup(seg, 100)
    assert d == Digest(H(b"\x00" + seg), 0)


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=3000), st.integers(min_value=1, max_value=300))
def test_every_node_matches_recursive_oracle(data, sz):
    d, tree = setup(data, sz)
    segs = naive_segments(data, sz) or [bytes(sz)]
    nodes = naive_nodes(segs)
    m = len(segs)
    assert tree.node_count == 2 * m - 1 == len(nodes)
    assert d.root == naive_root(segs)
    assert d.height == m.bit_length() - 1
    for k, value in nodes.items():
        assert tree.node(k) == value


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=2000), st.integers(min_value=1, max_value=200))
def test_padding_determinism(data, sz):
    assert setup(data, sz)[0] == setup(bytes(data), sz)[0]


# -- prove ------------------------------------------------------------------


def test_eight_leaf_proof_for_node_8(eight_leaf):
    _, d, tree = eight_leaf
    proof = prove(tree, 8)
    assert [n for n, _ in proof.siblings] == [7, 4, 2]
    assert [s.index for s in proof.segments] == [2]
    assert verify(d, 8, proof)


def test_single_leaf_root_proof():
    d, tree = setup(b"x", 16)
    proof = prove(tree, 0)
    assert proof.siblings == ()
    assert [s.index for s in proof.segments] == [1]
    assert verify(d, 0, proof)


def test_internal_node_3_covers_s1_s2(eight_leaf):
    _, d, tree = eight_leaf
    proof = prove(tree, 3)
    assert [s.index for s in proof.segments] == [1, 2]
    assert [n for n, _ in proof.siblings] == [4, 2]
    # independent enumeration
    assert naive_leaves_under(3, 8) == [7, 8]
    assert naive_path_siblings(3) == [4, 2]


def test_root_challenge_returns_everything(eight_leaf):
    _, d, tree = eight_leaf
    proof = prove(tree, 0)
    assert proof.siblings == ()
    assert [s.index for s in proof.segments] == list(range(1, 9))


def test_prove_from_raw_data_matches_tree(eight_leaf):
    data, _, tree = eight_leaf
    assert prove(data, 5, 64) == prove(tree, 5)
    with pytest.raises(InvalidParameter):
        prove(data, 5)


@pytest.mark.parametrize("c", [-1, 15, 100])
def test_out_of_range_challenge(eight_leaf, c):
    with pytest.raises(InvalidChallenge):
        prove(eight_leaf[2], c)


# -- verify -----------------------------------------------------------------


def test_all_nodes_verify_m16():
    data = os.urandom(16 * 40)
    d, tree = setup(data, 40)
    for c in range(31):
        proof = prove(tree, c)
        assert verify(d, c, proof)
        assert sorted(merkle.leaf_node(s.index, 16) for s in proof.segments) == naive_leaves_under(c, 16)
        assert [n for n, _ in proof.siblings] == naive_path_siblings(c)


def test_flipped_segment_byte_rejects(eight_leaf):
    _, d, tree = eight_leaf
    proof = prove(tree, 8)
    seg = proof.segments[0]
    bad = bytes([seg.data[0] ^ 1]) + seg.data[1:]
    tampered = StorageProof(8, proof.siblings, (Segment(seg.index, bad),))
    assert not verify(d, 8, tampered)


def test_structural_violations_reject(eight_leaf):
    _, d, tree = eight_leaf
    proof = prove(tree, 8)
    assert not verify(d, 9, proof)  # wrong challenge
    assert not verify(d, 8, StorageProof(8, proof.siblings[:-1], proof.segments))
    swapped = ((proof.siblings[0][0], proof.siblings[1][1]), (proof.siblings[1][0], proof.siblings[0][1])) + proof.siblings[2:]
    assert not verify(d, 8, StorageProof(8, swapped, proof.segments))
    renumbered = ((6, proof.siblings[0][1]),) + proof.siblings[1:]
    assert not verify(d, 8, StorageProof(8, renumbered, proof.segments))
    relabeled = (Segment(3, proof.segments[0].data),)
    assert not verify(d, 8, StorageProof(8, proof.siblings, relabeled))
    # right node data but the digest claims a different height
    assert not verify(Digest(d.root, 4), 8, proof)
    assert not verify(Digest(d.root, 2), 8, proof)


def test_subtree_consistency(eight_leaf):
    _, d, tree = eight_leaf
    internal = prove(tree, 1)
    # recompute node 1 from the internal proof's segments
    leaves = [H(b"\x00" + s.data) for s in internal.segments]
    while len(leaves) > 1:
        leaves = [H(b"\x01" + leaves[i] + leaves[i + 1]) for i in range(0, len(leaves), 2)]
    assert leaves[0] == tree.node(1)
    for leaf in naive_leaves_under(1, 8):
        assert verify(d, leaf, prove(tree, leaf))


def test_padding_segments_can_be_challenged():
    d, tree = setup(os.urandom(5000), 1024)
    for index in (6, 7, 8):
        c = merkle.leaf_node(index, 8)
        proof = prove(tree, c)
        assert proof.segments[0].data == bytes(1024)
        assert verify(d, c, proof)


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=1, max_size=4000), st.integers(min_value=1, max_value=256), st.data())
def test_completeness_property(data, sz, draw):
    d, tree = setup(data, sz)
    c = draw.draw(st.integers(min_value=0, max_value=2 * tree.padded_segment_count - 2))
    assert verify(d, c, prove(data, c, sz))


def test_exhaustive_bitflips_small_proof():
    d, tree = setup(os.urandom(8 * 16), 16)
    proof = prove(tree, 10)
    for s_i, seg in enumerate(proof.segments):
        for bit in range(len(seg.data) * 8):
            b = bytearray(seg.data)
            b[bit // 8] ^= 1 << (bit % 8)
            segs = list(proof.segments)
            segs[s_i] = Segment(seg.index, bytes(b))
            assert not verify(d, 10, StorageProof(10, proof.siblings, tuple(segs)))
    for j, (n, h) in enumerate(proof.siblings):
        for bit in range(256):
            b = bytearray(h)
            b[bit // 8] ^= 1 << (bit % 8)
            sibs = list(proof.siblings)
            sibs[j] = (n, bytes(b))
            assert not verify(d, 10, StorageProof(10, tuple(sibs), proof.segments))


# -- wire format ------------------------------------------------------------


def test_eight_leaf_encoding_layout(eight_leaf):
    _, _, tree = eight_leaf
    blob = encode_proof(prove(tree, 8))
    assert blob[:5] == b"POSP\x01"
    assert int.from_bytes(blob[5:13], "big") == 8
    assert int.from_bytes(blob[13:15], "big") == 3
    seg_count_at = 15 + 3 * (8 + 32)
    assert int.from_bytes(blob[seg_count_at:seg_count_at + 4], "big") == 1
    assert len(blob) == seg_count_at + 4 + 8 + 4 + 64
    assert [int.from_bytes(blob[15 + 40 * i:23 + 40 * i], "big") for i in range(3)] == [7, 4, 2]


def test_round_trip_identity(eight_leaf):
    blob = encode_proof(prove(eight_leaf[2], 3))
    assert encode_proof(decode_proof(blob)) == blob
    assert decode_proof(blob) == prove(eight_leaf[2], 3)


@pytest.mark.parametrize("m", [1, 2, 3, 5, 8, 17, 33, 64])
def test_random_proofs_round_trip(m):
    rng = random.Random(m)
    sz = rng.randint(1, 64)
    data = rng.randbytes(m * sz)
    _, tree = setup(data, sz)
    for c in rng.sample(range(2 * tree.padded_segment_count - 1), min(10, 2 * tree.padded_segment_count - 1)):
        blob = encode_proof(prove(tree, c))
        assert encode_proof(decode_proof(blob)) == blob


@pytest.mark.parametrize(
    "blob",
    [b"", b"POSP", b"XXXX\x01" + bytes(14), b"POSP\x02" + bytes(14), b"POSP\x01" + bytes(5)],
)
def test_decode_errors(blob):
    with pytest.raises(ProofDecodeError):
        decode_proof(blob)


def test_truncated_and_trailing_input(eight_leaf):
    blob = encode_proof(prove(eight_leaf[2], 8))
    with pytest.raises(ProofDecodeError):
        decode_proof(blob[:-1])
    with pytest.raises(ProofDecodeError):
        decode_proof(blob + b"\x00")


def test_digest_text_format(eight_leaf):
    d = eight_leaf[1]
    text = d.to_text()
    assert text == d.root.hex() + " 3\n"
    assert Digest.from_text(text) == d
    for bad in ("zz 3", d.root.hex(), d.root.hex() + " -1", "00 3"):
        with pytest.raises(ProofDecodeError):
            Digest.from_text(bad)
