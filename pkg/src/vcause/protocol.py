"""Three-party workflow: endpoint logger, cloud, administrator.

The logger records events into its graph, periodically syncs touched nodes
into the accumulator, and signs the resulting root as a commitment. The
cloud deterministically rebuilds the same state from the raw log and checks
its roots against the logger's commitments (any divergence is tampered
log data). The administrator validates analysis bundles against the signed
commitments plus an epoch-freshness check.

Everything is in-process; no network transport.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from . import causality
from .accumulator import Accumulator, TimestampKey
from .commitment import Commitment, make_commitment
from .hashcore import MsetDigest, mset_add
from .provgraph import (
    SEGMENTED,
    UNSEGMENTED,
    Edge,
    EventRecord,
    Graph,
    NodeRef,
    VersionNode,
)
from .wire import Reader, WireError, bytes_lp, str_lp, u8, u32, u64

_SNAP_MAGIC = b"VCSNAP1"

_MODE_TAGS = {SEGMENTED: 0, UNSEGMENTED: 1}
_MODE_FROM_TAG = {v: k for k, v in _MODE_TAGS.items()}


class RootMismatch(Exception):
    """Cloud replay diverged from a signed commitment: the log was tampered."""

    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"root mismatch at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


class UnknownEndpoint(KeyError):
    pass


class PendingChanges(RuntimeError):
    """Snapshots require a quiescent (fully committed) state."""


@dataclass(frozen=True, slots=True)
class StateConfig:
    mode: str = SEGMENTED
    depth: int = 1
    commit_interval: int = 1000


class EndpointState:
    """Graph + accumulator plus the set of nodes touched since last sync.

    Shared by the logger and the cloud's replayed reconstruction so both
    sides run bit-identical code.
    """

    def __init__(self, config: StateConfig):
        self.config = config
        self.graph = Graph(mode=config.mode, depth=config.depth)
        self.acc = Accumulator()
        self.pending_new: list[NodeRef] = []
        self._pending_new_set: set[NodeRef] = set()
        self.pending_dirty: dict[NodeRef, None] = {}
        self.events_since_commit = 0

    def apply_event(self, ev: EventRecord) -> None:
        res = self.graph.record_event(ev)
        for node in res.created:
            self.pending_new.append(node.ref)
            self._pending_new_set.add(node.ref)
        for ref in sorted(res.updated):
            if ref not in self._pending_new_set:
                self.pending_dirty[ref] = None
        self.events_since_commit += 1

    def flush(self) -> bytes:
        """Sync pending nodes into the accumulator and commit; returns R.

        Nodes touched several times within the window sync exactly once:
        new nodes register with their final digest, previously committed
        ones get a single update.
        """
        for ref in self.pending_new:
            self.acc.register_node(self.graph.node(ref))
        for ref in self.pending_dirty:
            node = self.graph.node(ref)
            self.acc.update_node(node.entity_ext, node.key, node.leaf_digest())
        self.pending_new.clear()
        self._pending_new_set.clear()
        self.pending_dirty.clear()
        self.events_since_commit = 0
        return self.acc.commit()

    @property
    def quiescent(self) -> bool:
        return not self.pending_new and not self.pending_dirty

    def fork(self) -> "EndpointState":
        """Independent copy for what-if replays (tamper detection probes)."""
        other = EndpointState.__new__(EndpointState)
        other.config = self.config
        other.graph = self.graph.fork()
        other.acc = self.acc.fork()
        other.pending_new = list(self.pending_new)
        other._pending_new_set = set(self._pending_new_set)
        other.pending_dirty = dict(self.pending_dirty)
        other.events_since_commit = self.events_since_commit
        return other


class EndpointLogger:
    """Endpoint role: record, periodically commit, sign."""

    def __init__(self, endpoint_id: str, keypair, config: StateConfig = StateConfig()):
        self.endpoint_id = endpoint_id
        self.keypair = keypair
        self.state = EndpointState(config)
        self.epoch = 0
        self.commitments: list[Commitment] = []

    def ingest(self, ev: EventRecord) -> Commitment | None:
        self.state.apply_event(ev)
        if self.state.events_since_commit >= self.state.config.commit_interval:
            return self.commit()
        return None

    def commit(self) -> Commitment:
        root = self.state.flush()
        self.epoch += 1
        # the signed timestamp is the stream's high-water mark, so logger
        # and cloud replay produce identical commitments deterministically
        c = make_commitment(
            self.keypair.signing_key,
            self.endpoint_id,
            self.epoch,
            root,
            self.state.acc.registry_digest(),
            self.state.graph.last_ts,
        )
        self.commitments.append(c)
        return c


@dataclass
class CloudEndpoint:
    state: EndpointState
    log: list[EventRecord] = field(default_factory=list)
    commitments: list[Commitment] = field(default_factory=list)


class Cloud:
    """Cloud role: reconstruct per-endpoint state from raw logs, serve queries."""

    def __init__(self):
        self.endpoints: dict[str, CloudEndpoint] = {}

    def replay(
        self,
        endpoint_id: str,
        events,
        commitments: list[Commitment],
        config: StateConfig = StateConfig(),
    ) -> CloudEndpoint:
        """Rebuild an endpoint's state, checking every commitment boundary.

        Raises RootMismatch at the first epoch whose recomputed root (or
        registry digest) disagrees with the logger's signed commitment.
        """
        ep = CloudEndpoint(EndpointState(config), [], list(commitments))
        self.endpoints[endpoint_id] = ep
        epoch = 0
        for ev in events:
            ep.log.append(ev)
            ep.state.apply_event(ev)
            if ep.state.events_since_commit >= config.commit_interval:
                epoch += 1
                self._check_epoch(ep, epoch)
        if epoch < len(ep.commitments) and ep.state.events_since_commit > 0:
            epoch += 1
            self._check_epoch(ep, epoch)
        if epoch != len(ep.commitments):
            raise RootMismatch(epoch + 1, "commitment without matching events")
        return ep

    @staticmethod
    def _check_epoch(ep: CloudEndpoint, epoch: int) -> None:
        root = ep.state.flush()
        if epoch > len(ep.commitments):
            raise RootMismatch(epoch, "events beyond the last commitment")
        expected = ep.commitments[epoch - 1]
        if expected.root != root:
            raise RootMismatch(epoch)
        if expected.registry_digest != ep.state.acc.registry_digest():
            raise RootMismatch(epoch, "registry digest diverged")

    def analyze(self, endpoint_id: str, query: causality.CausalityQuery) -> causality.ProofBundle:
        ep = self.endpoints.get(endpoint_id)
        if ep is None:
            raise UnknownEndpoint(endpoint_id)
        if not ep.commitments:
            raise causality.NotCommitted("endpoint has no commitments")
        return causality.analyze(ep.state.graph, ep.state.acc, ep.commitments[-1], query)


def admin_verify(
    vk,
    query: causality.CausalityQuery,
    bundle: causality.ProofBundle,
    min_epoch: int = 0,
) -> causality.VerifyReport:
    """Administrator-side validation plus commitment freshness."""
    report = causality.verify_bundle(vk, query, bundle)
    report.freshness_ok = bundle.commitment.epoch >= min_epoch
    if not report.freshness_ok and report.first_failure is None:
        report.first_failure = "stale commitment epoch"
    return report


class Admin:
    """Administrator role: per-endpoint keys and epoch high-water marks."""

    def __init__(self):
        self.keys = {}
        self.last_seen: dict[str, int] = {}

    def register_endpoint(self, endpoint_id: str, vk) -> None:
        self.keys[endpoint_id] = vk

    def verify(self, query: causality.CausalityQuery, bundle: causality.ProofBundle):
        endpoint_id = bundle.commitment.endpoint_id
        vk = self.keys.get(endpoint_id)
        if vk is None:
            report = causality.VerifyReport()
            report.first_failure = f"unknown endpoint {endpoint_id!r}"
            return report
        report = admin_verify(vk, query, bundle, self.last_seen.get(endpoint_id, 0))
        if report.accepted:
            self.last_seen[endpoint_id] = max(
                self.last_seen.get(endpoint_id, 0), bundle.commitment.epoch
            )
        return report


# -- tamper harness -----------------------------------------------------------

TAMPER_KINDS = (
    "delete-edge",
    "add-edge",
    "modify-edge",
    "modify-node",
    "delete-node",
    "forge-digest",
    "rollback-commitment",
)


@dataclass(frozen=True, slots=True)
class TamperReceipt:
    """What was mutated, plus a query guaranteed to exercise the damage."""

    description: str
    entity_ext: str | None
    timestamp: int | None


def tamper(ep: CloudEndpoint, kind: str, rng) -> TamperReceipt:
    """Apply a named mutation class to reconstructed cloud state.

    Mutations keep the graph traversable (so analysis still runs) while
    desynchronizing it from the committed digests; a bundle for the
    receipt's query must fail administrator validation.
    """
    graph = ep.state.graph
    nodes = [n for n in graph.nodes.values() if not n.is_terminal]
    if kind == "delete-edge":
        candidates = [n for n in nodes if n.in_edge_ids]
        victim = rng.choice(candidates)
        eid = rng.choice(victim.in_edge_ids)
        edge = graph.edges[eid]
        victim.in_edge_ids.remove(eid)
        graph.nodes[edge.src_ref].out_edge_ids.remove(eid)
        return TamperReceipt(
            f"deleted edge {eid}", victim.entity_ext, victim.key.timestamp
        )
    if kind == "add-edge":
        src, dst = rng.sample(nodes, 2)
        if src.created_seq > dst.created_seq:
            src, dst = dst, src
        edge = Edge(len(graph.edges), "dependency", src.ref, dst.ref, dst.ref,
                    "forged", dst.key.timestamp)
        graph.edges.append(edge)
        src.out_edge_ids.append(edge.edge_id)
        dst.in_edge_ids.append(edge.edge_id)
        return TamperReceipt(
            f"added edge {edge.edge_id}", dst.entity_ext, dst.key.timestamp
        )
    if kind == "modify-edge":
        candidates = [n for n in nodes if n.in_edge_ids]
        victim = rng.choice(candidates)
        edge = graph.edges[rng.choice(victim.in_edge_ids)]
        edge.event_type = edge.event_type + "?"
        edge._enc_logical = None
        edge._enc_seg = None
        return TamperReceipt(
            f"modified edge {edge.edge_id}", victim.entity_ext, victim.key.timestamp
        )
    if kind == "modify-node":
        victim = rng.choice(nodes)
        old_ts = victim.key.timestamp
        victim.key = TimestampKey(old_ts + 1, victim.key.seq)
        return TamperReceipt(f"modified node {victim.entity_ext}", victim.entity_ext, old_ts)
    if kind == "delete-node":
        candidates = [n for n in nodes if not n.out_edge_ids and n.in_edge_ids]
        victim = rng.choice(candidates)
        parent = graph.nodes[graph.edges[victim.in_edge_ids[0]].src_ref]
        for eid in list(victim.in_edge_ids):
            edge = graph.edges[eid]
            graph.nodes[edge.src_ref].out_edge_ids.remove(eid)
        del graph.nodes[victim.ref]
        graph.versions[victim.entity_id].remove(victim.key.encoded())
        if graph.latest.get(victim.entity_id) == victim.ref:
            keys = graph.versions[victim.entity_id]
            if keys:
                graph.latest[victim.entity_id] = (victim.entity_id, keys[-1])
            else:
                del graph.latest[victim.entity_id]
        # the deleted node's absence shows up in its parent's forward digest
        return TamperReceipt(
            f"deleted node {victim.entity_ext}", parent.entity_ext, parent.key.timestamp
        )
    if kind == "forge-digest":
        victim = rng.choice(nodes)
        victim.pi_out = mset_add(victim.pi_out, b"forged")
        return TamperReceipt(
            f"forged outgoing digest of {victim.entity_ext}",
            victim.entity_ext,
            victim.key.timestamp,
        )
    if kind == "rollback-commitment":
        if len(ep.commitments) < 2:
            raise ValueError("rollback needs at least two epochs")
        ep.commitments.pop()
        return TamperReceipt("rolled back to previous commitment", None, None)
    raise ValueError(f"unknown tamper kind {kind!r}")


# -- snapshots ----------------------------------------------------------------


def _write_node(out: list, node: VersionNode) -> None:
    out.extend((u64(node.entity_id), node.key.to_bytes()))
    out.append(u8(1 if node.is_terminal else 0))
    if node.terminal_target is None:
        out.append(u8(0))
    else:
        tid, tkey = node.terminal_target
        out.extend((u8(1), u64(tid), u64(tkey >> 32), u32(tkey & 0xFFFFFFFF)))
    out.extend((u64(node.tree_id + 1), u32(node.depth), u64(node.created_seq)))
    out.extend((node.pi_in.to_bytes(), node.pi_out.to_bytes()))


def _read_node(r: Reader) -> VersionNode:
    entity_id = r.u64()
    key = TimestampKey.read_from(r)
    is_terminal = r.u8() == 1
    target = None
    if r.u8() == 1:
        tid = r.u64()
        target = (tid, (r.u64() << 32) | r.u32())
    tree_id = r.u64() - 1
    depth = r.u32()
    created_seq = r.u64()
    pi_in = MsetDigest.from_bytes(r.take(512))
    pi_out = MsetDigest.from_bytes(r.take(512))
    node = VersionNode(entity_id, "", key, pi_in, pi_out, tree_id, depth,
                       is_terminal=is_terminal, terminal_target=target)
    node.created_seq = created_seq
    return node


def save_state(path: str, endpoint_id: str, epoch: int, state: EndpointState,
               commitments: list[Commitment]) -> None:
    """Versioned binary snapshot of one endpoint's reconstructed state."""
    if not state.quiescent:
        raise PendingChanges("flush before snapshotting")
    g = state.graph
    out: list[bytes] = [_SNAP_MAGIC, u8(1)]
    out.extend((u8(_MODE_TAGS[g.mode]), u32(g.depth), u32(state.config.commit_interval)))
    out.append(str_lp(endpoint_id))
    out.append(u64(epoch))
    out.append(u32(len(commitments)))
    out.extend(bytes_lp(c.to_bytes()) for c in commitments)

    out.extend((u64(g.last_ts), u64(g.event_count), u32(g.next_tree_id),
                u32(g.next_terminal), u64(g._created_seq)))
    out.append(u32(len(g.entity_exts)))
    out.extend(str_lp(e) for e in g.entity_exts)
    out.append(u32(len(g.nodes)))
    for node in g.nodes.values():  # insertion order == creation order
        _write_node(out, node)
    out.append(u32(len(g.edges)))
    for e in g.edges:
        out.append(u8(0 if e.kind == "temporal" else 1))
        for ref in (e.src_ref, e.dst_ref, e.seg_dst_ref):
            out.extend((u64(ref[0]), u64(ref[1] >> 32), u32(ref[1] & 0xFFFFFFFF)))
        out.extend((str_lp(e.event_type), u64(e.timestamp), bytes_lp(e.payload)))

    acc = state.acc
    out.append(u32(len(acc.registry_order)))
    out.extend(str_lp(e) for e in acc.registry_order)
    committed = acc._committed_root is not None
    out.append(u8(1 if committed else 0))
    if committed:
        out.append(acc._committed_root)
    for ext in acc.registry_order:
        tree = acc.locals[acc.registry[ext]]
        out.append(u32(len(tree.leaves)))
        for leaf in tree.leaves:
            out.extend((u64(leaf.key >> 32), u32(leaf.key & 0xFFFFFFFF), leaf.payload))

    blob = b"".join(out)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_state(path: str) -> tuple[str, int, EndpointState, list[Commitment]]:
    with open(path, "rb") as fh:
        r = Reader(fh.read())
    if r.take(len(_SNAP_MAGIC)) != _SNAP_MAGIC:
        raise WireError("not a state snapshot")
    if r.u8() != 1:
        raise WireError("unsupported snapshot version")
    mode = _MODE_FROM_TAG[r.u8()]
    depth = r.u32()
    interval = r.u32()
    endpoint_id = r.str_lp()
    epoch = r.u64()
    commitments = [Commitment.from_bytes(r.bytes_lp()) for _ in range(r.u32())]

    state = EndpointState(StateConfig(mode, depth, interval))
    g = state.graph
    g.last_ts = r.u64()
    g.event_count = r.u64()
    g.next_tree_id = r.u32()
    g.next_terminal = r.u32()
    g._created_seq = r.u64()
    for _ in range(r.u32()):
        g._entity_id(r.str_lp())
    for _ in range(r.u32()):
        node = _read_node(r)
        node.entity_ext = g.entity_exts[node.entity_id]
        g.nodes[node.ref] = node
        g.versions[node.entity_id].append(node.key.encoded())
        if not node.is_terminal:
            g.latest[node.entity_id] = node.ref
    for i in range(r.u32()):
        kind = "temporal" if r.u8() == 0 else "dependency"
        refs = []
        for _ in range(3):
            eid = r.u64()
            refs.append((eid, (r.u64() << 32) | r.u32()))
        edge = Edge(i, kind, refs[0], refs[1], refs[2], r.str_lp(), r.u64(), r.bytes_lp())
        g.edges.append(edge)
        g.nodes[edge.src_ref].out_edge_ids.append(i)
        g.nodes[edge.dst_ref].in_edge_ids.append(i)
        if g.mode == SEGMENTED:
            g.nodes[edge.seg_dst_ref].seg_parent_edge = i
    if g.mode == SEGMENTED:
        for node in g.nodes.values():
            if node.seg_parent_edge is None:
                g.trees[node.tree_id] = node.ref

    acc = state.acc
    registry = [r.str_lp() for _ in range(r.u32())]
    committed = r.u8() == 1
    stored_root = r.take(32) if committed else None
    from .dimtree import LeafRecord

    for ext in registry:
        internal = acc._assign_id(ext)
        for _ in range(r.u32()):
            key = (r.u64() << 32) | r.u32()
            acc.locals[internal].insert(LeafRecord(key, r.take(32)))
            acc._dirty.add(internal)
    r.finish()
    if committed:
        root = acc.commit()
        if root != stored_root:
            raise WireError("snapshot accumulator root mismatch")
    return endpoint_id, epoch, state, commitments
