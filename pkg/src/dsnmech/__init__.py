"""Challenge-based, incentive-compatible storage contracts.

Merkle proof of storage, the contract game and its equilibrium, an escrow
contract engine with an oracle-driven challenge flow, signed-counter request
billing, a seeded simulation harness and a benchmark.
"""

from .merkle import Digest, MerkleTree, StorageProof, decode_proof, encode_proof, prove, setup, verify

__all__ = ["Digest", "MerkleTree", "StorageProof", "decode_proof", "encode_proof", "prove", "setup", "verify"]
__version__ = "0.1.0"
