"""Dynamic indexed Merkle tree (DIM-Tree).

An append-ordered Merkle forest of perfect binary subtrees. Leaves carry
monotone integer keys; every internal node stores the min/max key of its
subtree and binds them into its hash, so search-path proofs can also prove
that the matched leaf satisfies a keyword relation (exact match, floor,
ceiling) or that no leaf does.

Insertion is a subtree merge with O(1) amortized cost: after n inserts the
total number of internal-hash computations is exactly n - popcount(n).
Finalize folds the subtree roots right to left into a single root; the fold
nodes are cached and invalidated lazily on the next mutation.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from .wire import Reader, WireError, u8, u16, u128

_LEAF_TAG = b"\x00"
_INTERNAL_TAG = b"\x01"

SIDE_LEFT = 0  # sibling sits to the left of the walk
SIDE_RIGHT = 1

REL_EXACT = "exact"
REL_LE = "le"  # greatest key <= bound
REL_GE = "ge"  # least key >= bound

_REL_TAGS = {REL_EXACT: 0, REL_LE: 1, REL_GE: 2}
_REL_FROM_TAG = {v: k for k, v in _REL_TAGS.items()}


class OutOfOrderKey(ValueError):
    """Insert key below the current maximum; appends must be monotone."""


class EmptyTree(ValueError):
    """Operation requires at least one leaf."""


class NotFinalized(RuntimeError):
    """Searches run against a finalized root; call finalize() first."""


class LeafIndexError(IndexError):
    """Leaf index outside the tree."""


class HashCounters:
    """Instrumentation for scaling tests: counts hash computations."""

    __slots__ = ("internal", "leaf")

    def __init__(self):
        self.internal = 0
        self.leaf = 0

    def reset(self) -> None:
        self.internal = 0
        self.leaf = 0


#: Module-wide counter covering both tree maintenance and proof verification.
counters = HashCounters()


@dataclass(frozen=True, slots=True)
class LeafRecord:
    key: int
    payload: bytes


class _Node:
    __slots__ = ("hash", "min_key", "max_key", "height", "count", "left", "right")

    def __init__(self, hash_, min_key, max_key, height, count, left=None, right=None):
        self.hash = hash_
        self.min_key = min_key
        self.max_key = max_key
        self.height = height
        self.count = count
        self.left = left
        self.right = right


def _leaf_hash(key: int, payload: bytes) -> bytes:
    counters.leaf += 1
    return hashlib.sha3_256(_LEAF_TAG + u128(key) + payload).digest()


def _internal_hash(
    left_hash: bytes,
    right_hash: bytes,
    l_min: int,
    l_max: int,
    r_min: int,
    r_max: int,
) -> bytes:
    # Both children's full intervals go into the preimage. Binding only the
    # node's own (min, max) would leave the inner boundaries (left child's
    # max, right child's min) unauthenticated, and those are exactly the
    # fields floor/ceiling and gap-absence checks rely on.
    counters.internal += 1
    return hashlib.sha3_256(
        _INTERNAL_TAG
        + left_hash
        + right_hash
        + u128(l_min)
        + u128(l_max)
        + u128(r_min)
        + u128(r_max)
    ).digest()


def _merge(left: _Node, right: _Node) -> _Node:
    return _Node(
        _internal_hash(
            left.hash, right.hash,
            left.min_key, left.max_key, right.min_key, right.max_key,
        ),
        left.min_key,
        right.max_key,
        left.height + 1,
        left.count + right.count,
        left,
        right,
    )


@dataclass(frozen=True, slots=True)
class PathStep:
    """One sibling on the root-to-terminus walk."""

    side: int  # SIDE_LEFT or SIDE_RIGHT: where the sibling sits
    height: int
    min_key: int
    max_key: int
    hash: bytes


@dataclass(frozen=True, slots=True)
class Terminus:
    """Deepest node proving absence.

    Either a leaf (single-leaf tree mismatch) or an internal node exposed
    with both child summaries so the verifier can recompute its hash and
    check the key gap between the children.
    """

    leaf: LeafRecord | None
    left: tuple[bytes, int, int] | None  # (hash, min_key, max_key)
    right: tuple[bytes, int, int] | None

    @property
    def min_key(self) -> int:
        return self.leaf.key if self.leaf is not None else self.left[1]

    @property
    def max_key(self) -> int:
        return self.leaf.key if self.leaf is not None else self.right[2]


@dataclass(slots=True)
class SearchProof:
    relation: str
    key: int
    found: bool
    leaf: LeafRecord | None
    steps: list[PathStep]
    terminus: Terminus | None
    leaf_index: int | None = None  # prover-side convenience, not verified

    def to_bytes(self) -> bytes:
        out = [u8(1), u8(_REL_TAGS[self.relation]), u128(self.key), u8(1 if self.found else 0)]
        if self.found:
            out.append(u128(self.leaf.key))
            out.append(self.leaf.payload)
        out.append(u16(len(self.steps)))
        for s in self.steps:
            out.extend((u8(s.side), u8(s.height), u128(s.min_key), u128(s.max_key), s.hash))
        if not self.found:
            t = self.terminus
            if t.leaf is not None:
                out.extend((u8(0), u128(t.leaf.key), t.leaf.payload))
            else:
                out.append(u8(1))
                for h, mn, mx in (t.left, t.right):
                    out.extend((h, u128(mn), u128(mx)))
        return b"".join(out)

    @classmethod
    def read_from(cls, r: Reader) -> "SearchProof":
        if r.u8() != 1:
            raise WireError("unsupported search proof version")
        relation = _REL_FROM_TAG.get(r.u8())
        if relation is None:
            raise WireError("unknown relation tag")
        key = r.u128()
        found = r.u8() == 1
        leaf = LeafRecord(r.u128(), r.take(32)) if found else None
        steps = []
        for _ in range(r.u16()):
            steps.append(PathStep(r.u8(), r.u8(), r.u128(), r.u128(), r.take(32)))
        terminus = None
        if not found:
            kind = r.u8()
            if kind == 0:
                terminus = Terminus(LeafRecord(r.u128(), r.take(32)), None, None)
            elif kind == 1:
                left = (r.take(32), r.u128(), r.u128())
                right = (r.take(32), r.u128(), r.u128())
                terminus = Terminus(None, left, right)
            else:
                raise WireError("unknown terminus kind")
        return cls(relation, key, found, leaf, steps, terminus)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SearchProof":
        r = Reader(data)
        proof = cls.read_from(r)
        r.finish()
        return proof


@dataclass(slots=True)
class RangeSearchResult:
    """Boundary-sharing proof for all leaves with key in [lo, hi]."""

    lo: int
    hi: int
    found: bool
    leaves: list[LeafRecord]
    left_steps: list[PathStep]  # left-hand siblings on the walk to the leftmost leaf
    right_steps: list[PathStep]  # right-hand siblings on the walk to the rightmost
    n_leaves: int  # tree shape hints; lies break root equality
    left_index: int
    empty_evidence: SearchProof | None = None  # ceil(lo) proof when the range is empty

    def to_bytes(self) -> bytes:
        out = [u8(1), u128(self.lo), u128(self.hi), u8(1 if self.found else 0)]
        if not self.found:
            out.append(self.empty_evidence.to_bytes())
            return b"".join(out)
        out.append(u16(len(self.leaves)))
        for leaf in self.leaves:
            out.extend((u128(leaf.key), leaf.payload))
        for steps in (self.left_steps, self.right_steps):
            out.append(u16(len(steps)))
            for s in steps:
                out.extend((u8(s.side), u8(s.height), u128(s.min_key), u128(s.max_key), s.hash))
        out.extend((u128(self.n_leaves), u128(self.left_index)))
        return b"".join(out)

    @classmethod
    def read_from(cls, r: Reader) -> "RangeSearchResult":
        if r.u8() != 1:
            raise WireError("unsupported range proof version")
        lo, hi = r.u128(), r.u128()
        found = r.u8() == 1
        if not found:
            return cls(lo, hi, False, [], [], [], 0, 0, SearchProof.read_from(r))
        leaves = [LeafRecord(r.u128(), r.take(32)) for _ in range(r.u16())]
        paths = []
        for _ in range(2):
            paths.append(
                [PathStep(r.u8(), r.u8(), r.u128(), r.u128(), r.take(32)) for _ in range(r.u16())]
            )
        n_leaves, left_index = r.u128(), r.u128()
        return cls(lo, hi, True, leaves, paths[0], paths[1], n_leaves, left_index)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RangeSearchResult":
        r = Reader(data)
        res = cls.read_from(r)
        r.finish()
        return res


class DimTree:
    """Single-writer dynamic indexed Merkle tree.

    Leaves append in non-decreasing key order. Readers may search a
    finalized tree concurrently; callers serialize mutations.
    """

    def __init__(self):
        self.leaves: list[LeafRecord] = []
        self._stack: list[_Node] = []
        self._root: _Node | None = None
        self.merge_count = 0  # insertion merges only
        self.finalize_merge_count = 0
        self.update_hash_count = 0

    def __len__(self) -> int:
        return len(self.leaves)

    @property
    def finalized(self) -> bool:
        return self._root is not None

    def insert(self, leaf: LeafRecord) -> None:
        if self.leaves and leaf.key < self.leaves[-1].key:
            raise OutOfOrderKey(
                f"key {leaf.key} below current max {self.leaves[-1].key}"
            )
        node = _Node(_leaf_hash(leaf.key, leaf.payload), leaf.key, leaf.key, 1, 1)
        while self._stack and self._stack[-1].height == node.height:
            node = _merge(self._stack.pop(), node)
            self.merge_count += 1
        self._stack.append(node)
        self.leaves.append(leaf)
        self._root = None

    def update(self, leaf_index: int, new_payload: bytes) -> None:
        # path-copying: nodes off the updated path are shared, so forks of
        # this tree stay valid and updates never mutate reachable state
        if not 0 <= leaf_index < len(self.leaves):
            raise LeafIndexError(f"leaf {leaf_index} of {len(self.leaves)}")
        base = 0
        slot = None
        for i, node in enumerate(self._stack):
            if leaf_index < base + node.count:
                slot = i
                break
            base += node.count
        pos = leaf_index - base
        path: list[tuple[_Node, bool]] = []
        node = self._stack[slot]
        while node.height > 1:
            half = node.count // 2
            went_right = pos >= half
            path.append((node, went_right))
            if went_right:
                pos -= half
                node = node.right
            else:
                node = node.left
        old = self.leaves[leaf_index]
        fresh = _Node(_leaf_hash(old.key, new_payload), old.key, old.key, 1, 1)
        for parent, went_right in reversed(path):
            left = parent.left if went_right else fresh
            right = fresh if went_right else parent.right
            fresh = _merge(left, right)
            self.update_hash_count += 1
        self._stack[slot] = fresh
        self.leaves[leaf_index] = LeafRecord(old.key, new_payload)
        self._root = None

    def fork(self) -> "DimTree":
        """O(leaves) copy sharing all internal nodes with this tree."""
        other = DimTree()
        other.leaves = list(self.leaves)
        other._stack = list(self._stack)
        other._root = self._root
        other.merge_count = self.merge_count
        other.finalize_merge_count = self.finalize_merge_count
        other.update_hash_count = self.update_hash_count
        return other

    def finalize(self) -> bytes:
        if not self.leaves:
            raise EmptyTree("cannot finalize an empty tree")
        if self._root is None:
            acc = self._stack[-1]
            for node in self._stack[-2::-1]:
                acc = _merge(node, acc)
                self.finalize_merge_count += 1
            self._root = acc
        return self._root.hash

    @property
    def root(self) -> bytes:
        if self._root is None:
            raise NotFinalized("tree has unfinalized changes")
        return self._root.hash

    def find_index(self, key: int) -> int | None:
        """Index of the leaf with exactly this key, if present."""
        i = bisect_left(self.leaves, key, key=lambda l: l.key)
        if i < len(self.leaves) and self.leaves[i].key == key:
            return i
        return None

    # -- search / proofs ----------------------------------------------------

    def _require_root(self) -> _Node:
        if self._root is None:
            raise NotFinalized("tree has unfinalized changes")
        return self._root

    @staticmethod
    def _step_for(node: _Node, side: int) -> PathStep:
        return PathStep(side, node.height, node.min_key, node.max_key, node.hash)

    def search_exact(self, key: int) -> SearchProof:
        return self.search(REL_EXACT, key)

    def search_le(self, key: int) -> SearchProof:
        return self.search(REL_LE, key)

    def search_ge(self, key: int) -> SearchProof:
        return self.search(REL_GE, key)

    def search(self, relation: str, key: int) -> SearchProof:
        node = self._require_root()
        steps: list[PathStep] = []
        lo = 0
        while node.height > 1:
            l, r = node.left, node.right
            if relation == REL_EXACT:
                go_left = l.min_key <= key <= l.max_key
                go_right = (not go_left) and r.min_key <= key <= r.max_key
            elif relation == REL_LE:
                go_right = key >= r.min_key
                go_left = (not go_right) and key >= l.min_key
            else:  # REL_GE
                go_left = key <= l.max_key
                go_right = (not go_left) and key <= r.max_key
            if go_left:
                steps.append(self._step_for(r, SIDE_RIGHT))
                node = l
            elif go_right:
                steps.append(self._step_for(l, SIDE_LEFT))
                lo += l.count
                node = r
            else:
                terminus = Terminus(
                    None,
                    (l.hash, l.min_key, l.max_key),
                    (r.hash, r.min_key, r.max_key),
                )
                return SearchProof(relation, key, False, None, steps, terminus)
        leaf = self.leaves[lo]
        satisfied = (
            leaf.key == key
            if relation == REL_EXACT
            else leaf.key <= key
            if relation == REL_LE
            else leaf.key >= key
        )
        if not satisfied:
            # only reachable when the root itself is a leaf
            return SearchProof(relation, key, False, None, steps, Terminus(leaf, None, None))
        return SearchProof(relation, key, True, leaf, steps, None, leaf_index=lo)

    def range_search(self, lo: int, hi: int) -> RangeSearchResult:
        """All leaves with key in [lo, hi], with boundary-sharing proofs."""
        if lo > hi:
            raise ValueError("range lower bound above upper bound")
        self._require_root()
        keys = [l.key for l in self.leaves]
        il = bisect_left(keys, lo)
        ir = bisect_right(keys, hi) - 1
        if il > ir:
            return RangeSearchResult(
                lo, hi, False, [], [], [], 0, 0, empty_evidence=self.search_ge(lo)
            )
        left_steps = [s for s in self._walk_to_index(il) if s.side == SIDE_LEFT]
        right_steps = [s for s in self._walk_to_index(ir) if s.side == SIDE_RIGHT]
        return RangeSearchResult(
            lo, hi, True, self.leaves[il : ir + 1], left_steps, right_steps,
            len(self.leaves), il,
        )

    def _walk_to_index(self, index: int) -> list[PathStep]:
        node = self._require_root()
        steps = []
        pos = index
        while node.height > 1:
            if pos < node.left.count:
                steps.append(self._step_for(node.right, SIDE_RIGHT))
                node = node.left
            else:
                steps.append(self._step_for(node.left, SIDE_LEFT))
                pos -= node.left.count
                node = node.right
        return steps


# -- verification (pure functions, no tree access) --------------------------


def _fold_steps(leaf_hash: bytes, leaf_min: int, leaf_max: int, steps) -> tuple | None:
    """Recombine a terminus summary with its siblings bottom-up.

    Returns (hash, min, max) of the reconstructed root, or None if sibling
    intervals are inconsistent with the recorded sides.
    """
    cur_hash, cur_min, cur_max = leaf_hash, leaf_min, leaf_max
    for s in reversed(steps):
        if s.min_key > s.max_key:
            return None
        if s.side == SIDE_LEFT:
            if s.max_key > cur_min:
                return None
            cur_hash = _internal_hash(
                s.hash, cur_hash, s.min_key, s.max_key, cur_min, cur_max
            )
            cur_min = s.min_key
        elif s.side == SIDE_RIGHT:
            if s.min_key < cur_max:
                return None
            cur_hash = _internal_hash(
                cur_hash, s.hash, cur_min, cur_max, s.min_key, s.max_key
            )
            cur_max = s.max_key
        else:
            return None
    return cur_hash, cur_min, cur_max


def reconstruct_path(relation: str, key: int, proof: SearchProof) -> bytes | None:
    """Reconstruct the root a search proof commits to, or None if invalid.

    Performs every check except root equality: the path must recombine
    consistently and the index fields must prove the claimed outcome (for
    membership that the leaf satisfies the relation and, for le/ge, that no
    better leaf was skipped; for absence that the terminus interval
    excludes every satisfying key).
    """
    if proof.relation != relation or proof.key != key:
        return None
    if proof.found:
        if proof.leaf is None:
            return None
        leaf = proof.leaf
        folded = _fold_steps(_leaf_hash(leaf.key, leaf.payload), leaf.key, leaf.key, proof.steps)
        if folded is None:
            return None
        if relation == REL_EXACT:
            ok = leaf.key == key
        elif relation == REL_LE:
            ok = leaf.key <= key and all(
                s.min_key > key for s in proof.steps if s.side == SIDE_RIGHT
            )
        elif relation == REL_GE:
            ok = leaf.key >= key and all(
                s.max_key < key for s in proof.steps if s.side == SIDE_LEFT
            )
        else:
            ok = False
        return folded[0] if ok else None
    # absence
    t = proof.terminus
    if t is None:
        return None
    if t.leaf is not None:
        if proof.steps:
            return None  # a leaf terminus is only ever the root itself
        if relation == REL_EXACT:
            ok = t.leaf.key != key
        else:
            ok = t.leaf.key > key if relation == REL_LE else t.leaf.key < key
        return _leaf_hash(t.leaf.key, t.leaf.payload) if ok else None
    (lh, lmin, lmax), (rh, rmin, rmax) = t.left, t.right
    if lmin > lmax or rmin > rmax or lmax > rmin:
        return None
    node_hash = _internal_hash(lh, rh, lmin, lmax, rmin, rmax)
    folded = _fold_steps(node_hash, lmin, rmax, proof.steps)
    if folded is None:
        return None
    if relation == REL_EXACT:
        ok = (lmax < key < rmin) or (not proof.steps and (key < lmin or key > rmax))
    elif relation == REL_LE:
        ok = not proof.steps and lmin > key
    elif relation == REL_GE:
        ok = not proof.steps and rmax < key
    else:
        ok = False
    return folded[0] if ok else None


def verify_path(root: bytes, relation: str, key: int, proof: SearchProof) -> bool:
    """Check a search proof against a committed root."""
    return reconstruct_path(relation, key, proof) == root


def _subtree_heights(n: int) -> list[int]:
    """Heights of the perfect subtrees for an n-leaf tree, left to right."""
    return [bit + 1 for bit in range(n.bit_length() - 1, -1, -1) if n >> bit & 1]


class _RangeReplay:
    """Replays the finalized tree shape, consuming proof material in DFS order."""

    def __init__(self, result: RangeSearchResult):
        self.res = result
        self.il = result.left_index
        self.ir = result.left_index + len(result.leaves) - 1
        self.left_queue = list(result.left_steps)
        self.right_queue = list(result.right_steps)  # consumed deepest-first (from the end)
        self.next_leaf = 0

    def _consume_pruned(self, lo: int, hi: int, height: int):
        if hi <= self.il:
            if not self.left_queue:
                raise WireError("left path exhausted")
            step = self.left_queue.pop(0)
            if step.side != SIDE_LEFT:
                raise WireError("left path has wrong side")
        else:
            if not self.right_queue:
                raise WireError("right path exhausted")
            step = self.right_queue.pop()
            if step.side != SIDE_RIGHT:
                raise WireError("right path has wrong side")
        if step.height != height:
            raise WireError("sibling height mismatch")
        return step.hash, step.min_key, step.max_key

    def perfect(self, height: int, lo: int):
        hi = lo + (1 << (height - 1))
        if hi <= self.il or lo > self.ir:
            return self._consume_pruned(lo, hi, height)
        if height == 1:
            leaf = self.res.leaves[self.next_leaf]
            self.next_leaf += 1
            return _leaf_hash(leaf.key, leaf.payload), leaf.key, leaf.key
        mid = lo + (1 << (height - 2))
        lh, lmin, lmax = self.perfect(height - 1, lo)
        rh, rmin, rmax = self.perfect(height - 1, mid)
        return _internal_hash(lh, rh, lmin, lmax, rmin, rmax), lmin, rmax

    def fold(self, heights: list[int], i: int, lo: int):
        if i == len(heights) - 1:
            return self.perfect(heights[i], lo)
        size_left = 1 << (heights[i] - 1)
        span = self.res.n_leaves - lo
        if lo + span <= self.il or lo > self.ir:
            return self._consume_pruned(lo, lo + span, heights[i] + 1)
        lh, lmin, lmax = self.perfect(heights[i], lo)
        rh, rmin, rmax = self.fold(heights, i + 1, lo + size_left)
        return _internal_hash(lh, rh, lmin, lmax, rmin, rmax), lmin, rmax


def reconstruct_range(lo: int, hi: int, result: RangeSearchResult) -> bytes | None:
    """Reconstruct the root a range proof commits to, or None if invalid.

    Checks contiguity and completeness: every pruned subtree must prove
    (via its hash-bound min/max) that it lies entirely outside [lo, hi].
    """
    if result.lo != lo or result.hi != hi or lo > hi:
        return None
    if not result.found:
        ev = result.empty_evidence
        if result.leaves or ev is None:
            return None
        root = reconstruct_path(REL_GE, lo, ev)
        if root is None:
            return None
        # either nothing >= lo exists, or the least such key is above hi
        if ev.found and ev.leaf.key <= hi:
            return None
        return root
    m = len(result.leaves)
    if m == 0 or result.n_leaves < m or result.left_index + m > result.n_leaves:
        return None
    replay = _RangeReplay(result)
    try:
        heights = _subtree_heights(result.n_leaves)
        got_root, _, _ = replay.fold(heights, 0, 0)
    except WireError:
        return None
    if replay.left_queue or replay.right_queue or replay.next_leaf != m:
        return None
    keys = [l.key for l in result.leaves]
    if any(b < a for a, b in zip(keys, keys[1:])):
        return None
    if keys[0] < lo or keys[-1] > hi:
        return None
    # pruned subtrees must sit entirely outside the queried range
    if any(s.max_key >= lo for s in result.left_steps):
        return None
    if any(s.min_key <= hi for s in result.right_steps):
        return None
    return got_root


def verify_range(root: bytes, lo: int, hi: int, result: RangeSearchResult) -> bool:
    """Check a range proof against a committed root."""
    return reconstruct_range(lo, hi, result) == root
