"""Verifiable versioned provenance graph.

Events materialize version nodes linked by temporal and dependency edges.
Every node carries two multiset digests over its path structure:

- an incoming path digest, computed once at creation over the node's
  in-edges and their sources' digests, immutable afterwards;
- an outgoing path digest, maintained incrementally with homomorphic
  add/subtract as new events extend the node's outgoing paths.

In segmented mode the graph is partitioned into dependency trees: every
temporal edge is detached onto a digest-empty terminal stub that points at
its logical destination, and dependency edges that would push a tree past
the configured depth move their parent into a fresh tree. The outgoing
digest of a node then covers only its own tree, so an event touches at most
depth+1 existing digests instead of every ancestor.

Unsegmented outgoing digests (full ancestor propagation) are kept as a
test and benchmark mode.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .accumulator import TimestampKey
from .hashcore import (
    MsetDigest,
    encode_edge,
    hash_bytes,
    mset_add,
    mset_empty,
    mset_sub,
)


_NODE_PACK = __import__("struct").Struct(">QQIB")
_TARGET_PACK = __import__("struct").Struct(">BQQI")
_EXT_LEN_PACK = __import__("struct").Struct(">I")

_NODE_TAG = b"vc:node\x00"
_NLEAF_TAG = b"vc:node-leaf\x00"

SEGMENTED = "segmented"
UNSEGMENTED = "unsegmented"

TEMPORAL = "temporal"
DEPENDENCY = "dependency"

# Reserved entity namespace for terminal stubs; ingest rejects NUL bytes in
# real entity ids, so no collision is possible.
_TERMINAL_PREFIX = "\x00term\x00"

NodeRef = tuple[int, int]  # (entity_id, encoded TimestampKey)


def terminal_marker(is_terminal: bool, target: NodeRef | None) -> bytes:
    """Suffix binding terminal metadata into segment-view edge encodings."""
    if not is_terminal:
        return b"\x00"
    tid, tkey = target
    return _TARGET_PACK.pack(1, tid, tkey >> 32, tkey & 0xFFFFFFFF)


class ClockRegression(ValueError):
    """Event timestamp below the stream's high-water mark."""


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One audit event: src acts on dst at ts."""

    src: str
    action: str
    dst: str
    ts: int
    payload: bytes = b""


@dataclass(slots=True)
class VersionNode:
    entity_id: int
    entity_ext: str
    key: TimestampKey
    pi_in: MsetDigest
    pi_out: MsetDigest
    tree_id: int
    depth: int
    in_edge_ids: list[int] = field(default_factory=list)
    out_edge_ids: list[int] = field(default_factory=list)
    is_terminal: bool = False
    terminal_target: NodeRef | None = None
    created_seq: int = 0
    seg_parent_edge: int | None = None  # seg-view in-edge, for O(1) up-walks
    ref: NodeRef = None  # cached (entity_id, encoded key); keys never change

    def __post_init__(self):
        if self.ref is None:
            self.ref = (self.entity_id, self.key.encoded())

    def canonical_bytes(self) -> bytes:
        ext = self.entity_ext.encode("utf-8")
        if self.terminal_target is None:
            tail = b"\x00"
        else:
            tid, tkey = self.terminal_target
            tail = _TARGET_PACK.pack(1, tid, tkey >> 32, tkey & 0xFFFFFFFF)
        return b"".join((
            _NODE_TAG,
            _EXT_LEN_PACK.pack(len(ext)),
            ext,
            _NODE_PACK.pack(
                self.entity_id, self.key.timestamp, self.key.seq,
                1 if self.is_terminal else 0,
            ),
            tail,
        ))

    def leaf_digest(self) -> bytes:
        """Accumulator leaf payload: binds identity and both path digests."""
        return hash_bytes(
            _NLEAF_TAG
            + self.canonical_bytes()
            + self.pi_in.to_bytes()
            + self.pi_out.to_bytes()
        )


@dataclass(slots=True)
class Edge:
    edge_id: int
    kind: str  # TEMPORAL or DEPENDENCY
    src_ref: NodeRef
    dst_ref: NodeRef  # logical destination
    seg_dst_ref: NodeRef  # segment-view destination (terminal once detached)
    event_type: str
    timestamp: int
    payload: bytes = b""
    _enc_logical: bytes | None = None
    _enc_seg: bytes | None = None


@dataclass(slots=True)
class RecordResult:
    node: VersionNode
    created: list[VersionNode]  # new nodes in creation order (entries, node, terminals)
    updated: set[NodeRef]  # pre-existing nodes whose outgoing digest changed


@dataclass(slots=True)
class Segment:
    """One forward component piece, scoped to a single dependency tree."""

    anchor_ref: NodeRef
    nodes: list[VersionNode]
    edges: list[Edge]


class Graph:
    """Single-writer event graph for one endpoint stream."""

    def __init__(self, mode: str = SEGMENTED, depth: int = 1):
        if mode not in (SEGMENTED, UNSEGMENTED):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == SEGMENTED and depth < 1:
            raise ValueError("segmentation depth must be >= 1")
        self.mode = mode
        self.depth = depth
        self.nodes: dict[NodeRef, VersionNode] = {}
        self.edges: list[Edge] = []
        self.entity_ids: dict[str, int] = {}
        self.entity_exts: list[str] = []
        self.latest: dict[int, NodeRef] = {}  # entity -> latest real version
        self.versions: dict[int, list[int]] = {}  # entity -> encoded keys, ascending
        self.trees: dict[int, NodeRef] = {}
        self.next_tree_id = 0
        self.next_terminal = 0
        self.last_ts = 0
        self.event_count = 0
        self._created_seq = 0
        # instrumentation: per-attachment digest-update counts of the last event
        self.last_event_attachments: list[int] = []
        self.total_digest_updates = 0

    def fork(self) -> "Graph":
        """Deep-enough copy for what-if replays: nodes and edges are
        duplicated (they mutate in place), immutable digests are shared."""
        other = Graph.__new__(Graph)
        other.mode = self.mode
        other.depth = self.depth
        new_node = VersionNode.__new__
        nodes = {}
        for ref, n in self.nodes.items():
            m = new_node(VersionNode)
            m.entity_id = n.entity_id
            m.entity_ext = n.entity_ext
            m.key = n.key
            m.pi_in = n.pi_in
            m.pi_out = n.pi_out
            m.tree_id = n.tree_id
            m.depth = n.depth
            m.in_edge_ids = list(n.in_edge_ids)
            m.out_edge_ids = list(n.out_edge_ids)
            m.is_terminal = n.is_terminal
            m.terminal_target = n.terminal_target
            m.created_seq = n.created_seq
            m.seg_parent_edge = n.seg_parent_edge
            m.ref = n.ref
            nodes[ref] = m
        other.nodes = nodes
        new_edge = Edge.__new__
        edges = []
        for e in self.edges:
            f = new_edge(Edge)
            f.edge_id = e.edge_id
            f.kind = e.kind
            f.src_ref = e.src_ref
            f.dst_ref = e.dst_ref
            f.seg_dst_ref = e.seg_dst_ref
            f.event_type = e.event_type
            f.timestamp = e.timestamp
            f.payload = e.payload
            f._enc_logical = e._enc_logical
            f._enc_seg = e._enc_seg
            edges.append(f)
        other.edges = edges
        other.entity_ids = dict(self.entity_ids)
        other.entity_exts = list(self.entity_exts)
        other.latest = dict(self.latest)
        other.versions = {k: list(v) for k, v in self.versions.items()}
        other.trees = dict(self.trees)
        other.next_tree_id = self.next_tree_id
        other.next_terminal = self.next_terminal
        other.last_ts = self.last_ts
        other.event_count = self.event_count
        other._created_seq = self._created_seq
        other.last_event_attachments = list(self.last_event_attachments)
        other.total_digest_updates = self.total_digest_updates
        return other

    # -- lookups -------------------------------------------------------------

    def node(self, ref: NodeRef) -> VersionNode:
        try:
            return self.nodes[ref]
        except KeyError:
            raise UnknownNode(ref) from None

    def latest_node(self, entity_ext: str) -> VersionNode | None:
        entity_id = self.entity_ids.get(entity_ext)
        if entity_id is None:
            return None
        return self.nodes[self.latest[entity_id]]

    def encode_edge_logical(self, edge: Edge) -> bytes:
        if edge._enc_logical is None:
            edge._enc_logical = encode_edge(
                edge, self.nodes[edge.src_ref], self.nodes[edge.dst_ref]
            )
        return edge._enc_logical

    def encode_edge_seg(self, edge: Edge) -> bytes:
        # The segment view appends the destination's terminal marker (and
        # target ref) so outgoing digests bind stub metadata; otherwise a
        # prover could flip a stub into a fake exit node unnoticed.
        if edge._enc_seg is None:
            dst = self.nodes[edge.seg_dst_ref]
            edge._enc_seg = encode_edge(
                edge, self.nodes[edge.src_ref], dst
            ) + terminal_marker(dst.is_terminal, dst.terminal_target)
        return edge._enc_seg

    # -- construction ----------------------------------------------------------

    def _entity_id(self, ext: str) -> int:
        entity_id = self.entity_ids.get(ext)
        if entity_id is None:
            entity_id = len(self.entity_exts)
            self.entity_ids[ext] = entity_id
            self.entity_exts.append(ext)
            self.versions[entity_id] = []
        return entity_id

    def _next_key(self, entity_id: int, ts: int) -> TimestampKey:
        keys = self.versions[entity_id]
        if keys:
            last = TimestampKey.from_encoded(keys[-1])
            if last.timestamp == ts:
                return TimestampKey(ts, last.seq + 1)
        return TimestampKey(ts, 0)

    def _add_node(self, node: VersionNode) -> VersionNode:
        node.created_seq = self._created_seq
        self._created_seq += 1
        self.nodes[node.ref] = node
        self.versions[node.entity_id].append(node.key.encoded())
        return node

    def _new_tree(self, root_ref: NodeRef) -> int:
        tree_id = self.next_tree_id
        self.next_tree_id += 1
        self.trees[tree_id] = root_ref
        return tree_id

    def _create_entry(self, entity_id: int, ts: int) -> VersionNode:
        node = VersionNode(
            entity_id,
            self.entity_exts[entity_id],
            self._next_key(entity_id, ts),
            mset_empty(),
            mset_empty(),
            tree_id=-1,
            depth=0,
        )
        self._add_node(node)
        if self.mode == SEGMENTED:
            node.tree_id = self._new_tree(node.ref)
        self.latest[entity_id] = node.ref
        return node

    def _create_terminal(self, target: VersionNode, ts: int) -> VersionNode:
        ext = f"{_TERMINAL_PREFIX}{self.next_terminal}"
        self.next_terminal += 1
        entity_id = self._entity_id(ext)
        node = VersionNode(
            entity_id,
            ext,
            TimestampKey(ts, 0),
            mset_empty(),
            mset_empty(),
            tree_id=target.tree_id,
            depth=target.depth,
            is_terminal=True,
            terminal_target=target.ref,
        )
        return self._add_node(node)

    def _add_edge(self, kind: str, src: VersionNode, dst: VersionNode, ev: EventRecord) -> Edge:
        edge = Edge(
            len(self.edges), kind, src.ref, dst.ref, dst.ref, ev.action, ev.ts, ev.payload
        )
        self.edges.append(edge)
        src.out_edge_ids.append(edge.edge_id)
        dst.in_edge_ids.append(edge.edge_id)
        return edge

    def record_event(self, ev: EventRecord) -> RecordResult:
        """Apply one event: new dst version, edges, digest maintenance."""
        if ev.ts < self.last_ts:
            raise ClockRegression(f"timestamp {ev.ts} below high-water mark {self.last_ts}")
        self.last_ts = ev.ts
        self.event_count += 1
        self.last_event_attachments = []
        created: list[VersionNode] = []
        updated: set[NodeRef] = set()

        # Entity ids are assigned at first node creation, in creation order,
        # so the accumulator's dense registry matches when nodes are
        # registered in `created` order.
        if ev.src == ev.dst:
            dst_id = self._entity_id(ev.dst)
            if dst_id not in self.latest:
                created.append(self._create_entry(dst_id, ev.ts))
            parent = self.nodes[self.latest[dst_id]]
            prev = None  # the parent doubles as the previous version; no temporal edge
        else:
            src_id = self._entity_id(ev.src)
            if src_id not in self.latest:
                created.append(self._create_entry(src_id, ev.ts))
            parent = self.nodes[self.latest[src_id]]
            dst_id = self._entity_id(ev.dst)
            prev_ref = self.latest.get(dst_id)
            prev = self.nodes[prev_ref] if prev_ref is not None else None

        node = VersionNode(
            dst_id,
            ev.dst,
            self._next_key(dst_id, ev.ts),
            mset_empty(),  # placeholder until edges exist
            mset_empty(),
            tree_id=-1,
            depth=0,
        )
        self._add_node(node)
        created.append(node)
        self.latest[dst_id] = node.ref

        dep_edge = self._add_edge(DEPENDENCY, parent, node, ev)
        temporal_edge = self._add_edge(TEMPORAL, prev, node, ev) if prev is not None else None
        node.pi_in = self.compute_pi_in(node)

        if self.mode == SEGMENTED:
            self._apply_segmentation(node, dep_edge, temporal_edge, ev, created, updated)
        else:
            self._update_unsegmented(node, updated)

        updated.difference_update(n.ref for n in created)
        return RecordResult(node, created, updated)

    # -- digests ---------------------------------------------------------------

    def compute_pi_in(self, node: VersionNode) -> MsetDigest:
        """Incoming path digest: multiset over (edge encoding, source digest)."""
        digest = mset_empty()
        for eid in node.in_edge_ids:
            edge = self.edges[eid]
            src = self.nodes[edge.src_ref]
            digest = mset_add(digest, self.encode_edge_logical(edge) + src.pi_in.to_bytes())
        return digest

    def _bump_chain(
        self,
        start: VersionNode,
        new_pi: MsetDigest,
        updated: set[NodeRef],
    ) -> None:
        """Rewrite start's outgoing digest and propagate up its tree chain.

        One call is one attachment batch; the touched-node count feeds the
        per-attachment instrumentation.
        """
        child = start
        child_old = child.pi_out
        child.pi_out = new_pi
        updated.add(child.ref)
        count = 1
        while child.seg_parent_edge is not None:
            edge = self.edges[child.seg_parent_edge]
            parent = self.nodes[edge.src_ref]
            enc = self.encode_edge_seg(edge)
            parent_old = parent.pi_out
            parent.pi_out = mset_add(
                mset_sub(parent_old, enc + child_old.to_bytes()),
                enc + child.pi_out.to_bytes(),
            )
            updated.add(parent.ref)
            count += 1
            child, child_old = parent, parent_old
        self.last_event_attachments.append(count)
        self.total_digest_updates += count

    def _attach_seg_child(self, edge: Edge, child: VersionNode, updated: set[NodeRef]) -> None:
        """Eq-5 style attach: child (digest-empty) hangs off edge.src."""
        child.seg_parent_edge = edge.edge_id
        parent = self.nodes[edge.src_ref]
        elem = self.encode_edge_seg(edge) + child.pi_out.to_bytes()
        self._bump_chain(parent, mset_add(parent.pi_out, elem), updated)

    def _apply_segmentation(
        self,
        node: VersionNode,
        dep_edge: Edge,
        temporal_edge: Edge | None,
        ev: EventRecord,
        created: list[VersionNode],
        updated: set[NodeRef],
    ) -> None:
        parent = self.nodes[dep_edge.src_ref]
        if parent.depth + 1 <= self.depth:
            # Case 1: the edge stays in the parent's tree
            node.tree_id = parent.tree_id
            node.depth = parent.depth + 1
            self._attach_seg_child(dep_edge, node, updated)
        else:
            # Case 2: move the parent (with its terminal stubs) to a new
            # tree and stub its old position. A parent at depth L has no
            # non-terminal descendants: a dependency child would already
            # have exceeded the bound.
            stub = self._create_terminal(parent, ev.ts)
            created.append(stub)
            in_edge = (
                self.edges[parent.seg_parent_edge]
                if parent.seg_parent_edge is not None
                else None
            )
            new_tree = self._new_tree(parent.ref)
            parent.tree_id = new_tree
            parent.depth = 0
            parent.seg_parent_edge = None
            for eid in parent.out_edge_ids:
                if eid == dep_edge.edge_id:
                    continue  # the triggering edge; its node is placed below
                child = self.nodes[self.edges[eid].seg_dst_ref]
                assert child.is_terminal, "non-terminal child below a depth-L node"
                child.tree_id = new_tree
                child.depth = 0
            if in_edge is not None:
                old_enc = self.encode_edge_seg(in_edge)
                in_edge.seg_dst_ref = stub.ref
                in_edge._enc_seg = None
                stub.seg_parent_edge = in_edge.edge_id
                grand = self.nodes[in_edge.src_ref]
                swapped = mset_add(
                    mset_sub(grand.pi_out, old_enc + parent.pi_out.to_bytes()),
                    self.encode_edge_seg(in_edge) + stub.pi_out.to_bytes(),
                )
                self._bump_chain(grand, swapped, updated)
            node.tree_id = new_tree
            node.depth = 1
            self._attach_seg_child(dep_edge, node, updated)

        if temporal_edge is not None:
            prev = self.nodes[temporal_edge.src_ref]
            stub = self._create_terminal(node, ev.ts)
            stub.tree_id = prev.tree_id
            stub.depth = prev.depth
            created.append(stub)
            temporal_edge.seg_dst_ref = stub.ref
            temporal_edge._enc_seg = None
            self._attach_seg_child(temporal_edge, stub, updated)

    def _update_unsegmented(self, node: VersionNode, updated: set[NodeRef]) -> None:
        """Eq-5/6 batch over the full logical graph, one pass per ancestor."""
        stash: dict[NodeRef, MsetDigest] = {}
        heap: list[tuple[int, NodeRef]] = []

        def touch(n: VersionNode) -> None:
            if n.ref not in stash:
                stash[n.ref] = n.pi_out
                heapq.heappush(heap, (-n.created_seq, n.ref))

        for eid in node.in_edge_ids:
            edge = self.edges[eid]
            pred = self.nodes[edge.src_ref]
            touch(pred)
            # logical destinations are never terminals; the constant marker
            # keeps outgoing-digest elements uniform across modes
            elem = self.encode_edge_logical(edge) + b"\x00" + node.pi_out.to_bytes()
            pred.pi_out = mset_add(pred.pi_out, elem)

        done: set[NodeRef] = set()
        while heap:
            _, ref = heapq.heappop(heap)
            if ref in done:
                continue
            done.add(ref)
            child = self.nodes[ref]
            old_bytes = stash[ref].to_bytes()
            new_bytes = child.pi_out.to_bytes()
            for eid in child.in_edge_ids:
                edge = self.edges[eid]
                pred = self.nodes[edge.src_ref]
                touch(pred)
                enc = self.encode_edge_logical(edge) + b"\x00"
                pred.pi_out = mset_add(
                    mset_sub(pred.pi_out, enc + old_bytes), enc + new_bytes
                )
        updated.update(done)
        self.last_event_attachments.append(len(done))
        self.total_digest_updates += len(done)

    # -- traversals ------------------------------------------------------------

    def collect_backward(self, ref: NodeRef) -> tuple[list[VersionNode], list[Edge]]:
        """Backward components: every node with a path into ref, plus their
        in-edges (the queried node and its own in-edges included)."""
        start = self.node(ref)
        seen = {ref}
        stack = [start]
        nodes = []
        edge_ids: set[int] = set()
        while stack:
            cur = stack.pop()
            nodes.append(cur)
            for eid in cur.in_edge_ids:
                edge_ids.add(eid)
                src_ref = self.edges[eid].src_ref
                if src_ref not in seen:
                    seen.add(src_ref)
                    stack.append(self.nodes[src_ref])
        nodes.sort(key=lambda n: n.ref)
        return nodes, [self.edges[i] for i in sorted(edge_ids)]

    def collect_forward(self, ref: NodeRef) -> list[Segment]:
        """Forward components as segments, one per reached dependency tree.

        Each terminal opens a new segment at its target unless an earlier
        segment already covers that node. Anchors beyond the first are
        processed in sorted order for a deterministic layout.
        """
        self.node(ref)
        visited: set[NodeRef] = set()
        segments: list[Segment] = []
        queue: list[NodeRef] = [ref]
        while queue:
            anchor_ref = queue.pop(0)
            if anchor_ref in visited:
                continue
            seg_nodes: list[VersionNode] = []
            seg_edges: list[Edge] = []
            targets: set[NodeRef] = set()
            stack = [anchor_ref]
            visited.add(anchor_ref)
            while stack:
                cur = self.nodes[stack.pop()]
                seg_nodes.append(cur)
                if cur.is_terminal:
                    targets.add(cur.terminal_target)
                    continue
                for eid in cur.out_edge_ids:
                    edge = self.edges[eid]
                    seg_edges.append(edge)
                    nxt = edge.seg_dst_ref
                    if nxt not in visited:
                        visited.add(nxt)
                        stack.append(nxt)
            seg_nodes.sort(key=lambda n: n.ref)
            seg_edges.sort(key=lambda e: e.edge_id)
            segments.append(Segment(anchor_ref, seg_nodes, seg_edges))
            queue.extend(sorted(t for t in targets if t not in visited))
        return segments

    def flatten_forward(self, segments: list[Segment]) -> tuple[set[NodeRef], set[int]]:
        """Union of segments in the logical view: terminals dropped, their
        targets already covered by the segment structure."""
        refs: set[NodeRef] = set()
        edge_ids: set[int] = set()
        for seg in segments:
            for n in seg.nodes:
                if not n.is_terminal:
                    refs.add(n.ref)
            for e in seg.edges:
                edge_ids.add(e.edge_id)
        return refs, edge_ids
