"""Sparse fixed-depth Merkle tree over rollup accounts.

Each account occupies the leaf at the top ``depth`` bits of hash(address).
A leaf commits to (address, balance, nonce); an account with zero balance and
zero nonce is indistinguishable from an absent one, so every address has a
provable state.

    leaf   = H(0x00 || address || u128 balance || u64 nonce)
    node   = H(0x01 || left || right)
    empty  = H(0x02 || "teerollup/empty-leaf")
"""

from __future__ import annotations

from dataclasses import dataclass

from . import encoding as enc
from .crypto import Digest, PublicKey, hash

DEFAULT_DEPTH = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_LEAF = hash(b"\x02teerollup/empty-leaf")


class KeyCollision(ValueError):
    """Two distinct addresses map to the same leaf slot."""


def _defaults(depth: int) -> list[Digest]:
    out = [EMPTY_LEAF]
    for _ in range(depth):
        out.append(hash(NODE_PREFIX + out[-1] + out[-1]))
    return out


_DEFAULTS: dict[int, list[Digest]] = {}


def default_hashes(depth: int) -> list[Digest]:
    """Digest of an all-empty subtree at each level (0 = leaf, depth = root)."""
    if depth not in _DEFAULTS:
        _DEFAULTS[depth] = _defaults(depth)
    return _DEFAULTS[depth]


def leaf_index(address: PublicKey, depth: int) -> int:
    if not 1 <= depth <= 64:
        raise ValueError("depth must be in 1..64")
    return int.from_bytes(hash(address)[:8], "big") >> (64 - depth)


def leaf_hash(address: PublicKey, balance: int, nonce: int = 0) -> Digest:
    if balance == 0 and nonce == 0:
        return EMPTY_LEAF
    return hash(LEAF_PREFIX + address + enc.u128(balance) + enc.u64(nonce))


@dataclass(frozen=True)
class MerkleProof:
    key: PublicKey
    value: int
    nonce: int
    path: tuple[tuple[Digest, int], ...]  # (sibling, side) from leaf upward; side 0 = sibling on the left
    root: Digest

    @property
    def depth(self) -> int:
        return len(self.path)

    def encode(self) -> bytes:
        out = [enc.varbytes(self.key), enc.u128(self.value), enc.u64(self.nonce), enc.u8(self.depth)]
        for sibling, side in self.path:
            out.append(enc.u8(side) + sibling)
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes, root: Digest) -> "MerkleProof":
        r = enc.Reader(data)
        key = r.varbytes()
        value = r.u128()
        nonce = r.u64()
        depth = r.u8()
        path = []
        for _ in range(depth):
            side = r.u8()
            path.append((r.take(32), side))
        if not r.done():
            raise ValueError("trailing bytes in proof")
        return cls(key, value, nonce, tuple(path), root)


def verify_proof(proof: MerkleProof, root: Digest | None = None) -> bool:
    """Recompute the path from the leaf; True iff it reaches the root.

    ``root`` overrides ``proof.root`` when the verifier has its own trusted root.
    """
    target = proof.root if root is None else root
    depth = len(proof.path)
    if not 1 <= depth <= 64 or proof.value < 0 or proof.nonce < 0:
        return False
    try:
        idx = leaf_index(proof.key, depth)
        node = leaf_hash(proof.key, proof.value, proof.nonce)
    except (ValueError, OverflowError):
        return False
    for level, (sibling, side) in enumerate(proof.path):
        if not isinstance(sibling, bytes) or len(sibling) != 32:
            return False
        bit = (idx >> level) & 1
        # the side must agree with the key's own position
        if side != (0 if bit else 1):
            return False
        node = hash(NODE_PREFIX + sibling + node) if bit else hash(NODE_PREFIX + node + sibling)
    return node == target


class AccountTree:
    """Mutable account store; call ``copy()`` to take a snapshot."""

    def __init__(self, depth: int = DEFAULT_DEPTH):
        self.depth = depth
        self._defaults = default_hashes(depth)
        self._leaves: dict[int, tuple[PublicKey, int, int]] = {}
        self._nodes: dict[tuple[int, int], Digest] = {}
        self._dirty: set[int] = set()

    @classmethod
    def from_balances(cls, balances: dict[PublicKey, int], depth: int = DEFAULT_DEPTH) -> "AccountTree":
        tree = cls(depth)
        for addr, bal in balances.items():
            tree.set_balance(addr, bal)
        return tree

    def copy(self) -> "AccountTree":
        self._rehash()
        other = AccountTree.__new__(AccountTree)
        other.depth = self.depth
        other._defaults = self._defaults
        other._leaves = dict(self._leaves)
        other._nodes = dict(self._nodes)
        other._dirty = set()
        return other

    def __len__(self) -> int:
        return len(self._leaves)

    def __contains__(self, address: PublicKey) -> bool:
        slot = self._leaves.get(leaf_index(address, self.depth))
        return slot is not None and slot[0] == address

    def items(self):
        """Yield (address, balance, nonce) for every non-empty account."""
        for addr, bal, nonce in self._leaves.values():
            yield addr, bal, nonce

    def balances(self) -> dict[PublicKey, int]:
        return {addr: bal for addr, bal, _ in self._leaves.values()}

    def get(self, address: PublicKey) -> tuple[int, int]:
        """(balance, nonce); absent accounts read as (0, 0)."""
        slot = self._leaves.get(leaf_index(address, self.depth))
        if slot is None:
            return 0, 0
        if slot[0] != address:
            return 0, 0
        return slot[1], slot[2]

    def balance(self, address: PublicKey) -> int:
        return self.get(address)[0]

    def nonce(self, address: PublicKey) -> int:
        return self.get(address)[1]

    def set_balance(self, address: PublicKey, balance: int, nonce: int | None = None) -> "AccountTree":
        if balance < 0:
            raise ValueError("balance must be non-negative")
        idx = leaf_index(address, self.depth)
        slot = self._leaves.get(idx)
        if slot is not None and slot[0] != address:
            raise KeyCollision(f"leaf {idx} already holds another address")
        if nonce is None:
            nonce = slot[2] if slot else 0
        if nonce < 0:
            raise ValueError("nonce must be non-negative")
        if balance == 0 and nonce == 0:
            self._leaves.pop(idx, None)
        else:
            self._leaves[idx] = (address, balance, nonce)
        self._dirty.add(idx)
        return self

    def _rehash(self) -> None:
        if not self._dirty:
            return
        nodes = self._nodes
        defaults = self._defaults
        level_dirty = self._dirty
        for idx in level_dirty:
            slot = self._leaves.get(idx)
            if slot is None:
                nodes.pop((0, idx), None)
            else:
                nodes[(0, idx)] = leaf_hash(*slot)
        for level in range(1, self.depth + 1):
            parents = {i >> 1 for i in level_dirty}
            below = level - 1
            d_below = defaults[below]
            for p in parents:
                left = nodes.get((below, 2 * p), d_below)
                right = nodes.get((below, 2 * p + 1), d_below)
                if left is d_below and right is d_below:
                    nodes.pop((level, p), None)
                else:
                    nodes[(level, p)] = hash(NODE_PREFIX + left + right)
            level_dirty = parents
        self._dirty = set()

    def root(self) -> Digest:
        self._rehash()
        return self._nodes.get((self.depth, 0), self._defaults[self.depth])

    def prove(self, address: PublicKey) -> MerkleProof:
        self._rehash()
        idx = leaf_index(address, self.depth)
        balance, nonce = self.get(address)
        path = []
        for level in range(self.depth):
            node_idx = idx >> level
            sib_idx = node_idx ^ 1
            sibling = self._nodes.get((level, sib_idx), self._defaults[level])
            path.append((sibling, 0 if node_idx & 1 else 1))
        return MerkleProof(address, balance, nonce, tuple(path), self.root())
