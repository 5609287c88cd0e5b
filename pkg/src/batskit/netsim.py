"""Inner-code network simulation.

Slot-synchronous, per-batch simulation of recoding schemes over packet
erasure networks: line relays with bounded buffers, multipath unicast,
two-way relaying (with and without physical-layer combining), tree
multicast, and the butterfly. Batches never mix, so each batch's journey
through the network is simulated independently under its own derived
random stream; destinations recover the transfer matrix H_i from the
coding vectors carried by the surviving packets.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from .gf import GF, RandomStream
from .rankdist import RankDistribution, empirical_rank_dist

SCHEMES = ("Line", "UnicastSplit", "UnicastJoint", "TwoWayRelay",
           "TwoWayRelayPNC", "TreeMulticast", "Butterfly", "ButterflySplit")

_ROLES = ("source", "intermediate", "destination")


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    eps: float
    latency: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps {self.eps} outside [0, 1]")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple  # ((id, role), ...)
    links: tuple  # (Link, ...)

    def __post_init__(self):
        ids = [n for n, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        roles = dict(self.nodes)
        for r in roles.values():
            if r not in _ROLES:
                raise ValueError(f"unknown role {r!r}")
        for ln in self.links:
            if ln.src not in roles or ln.dst not in roles:
                raise ValueError(f"link endpoint not a node: {ln}")
            if roles[ln.dst] == "source":
                raise ValueError("source node has an incoming link")
        g = nx.DiGraph()
        g.add_nodes_from(ids)
        g.add_edges_from((ln.src, ln.dst) for ln in self.links)
        if not nx.is_directed_acyclic_graph(g):
            raise ValueError("topology must be acyclic")

    @property
    def source(self) -> str:
        srcs = [n for n, r in self.nodes if r == "source"]
        if len(srcs) != 1:
            raise ValueError("expected exactly one source")
        return srcs[0]

    @property
    def destinations(self) -> list:
        return [n for n, r in self.nodes if r == "destination"]

    def successors(self, node: str) -> list:
        return sorted({ln.dst for ln in self.links if ln.src == node})

    def links_from(self, node: str) -> list:
        return [ln for ln in self.links if ln.src == node]

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "role": r} for n, r in self.nodes],
            "links": [{"from": ln.src, "to": ln.dst, "eps": ln.eps,
                       "latency": ln.latency} for ln in self.links],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkTopology":
        nodes = tuple((n["id"], n["role"]) for n in d["nodes"])
        links = tuple(Link(ln["from"], ln["to"], float(ln["eps"]),
                           int(ln.get("latency", 0))) for ln in d["links"])
        return cls(nodes, links)


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    M: int
    q: int
    n: int
    seed: int
    T: int = 0
    m_tilde: int | None = None
    n_h: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n < 1:
            raise ValueError("need n >= 1 batches")
        if self.m_tilde is not None and not 1 <= self.m_tilde <= self.M:
            raise ValueError("m_tilde must be in 1..M")


class NodeBuffer:
    """Bounded per-batch packet store; arrivals beyond capacity are dropped
    (after taking part in the current slot's recoding)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items = []
        self.peak = 0

    def push(self, item) -> bool:
        if len(self.items) >= self.capacity:
            return False
        self.items.append(item)
        self.peak = max(self.peak, len(self.items))
        return True


@dataclass
class DestinationTrace:
    destination: str
    M: int  # coding-vector length = batch size seen by this destination
    batch_ids: list = field(default_factory=list)
    hs: list = field(default_factory=list)  # per-batch M x cols matrices

    def add(self, batch_id: int, h: np.ndarray):
        if h.ndim != 2 or h.shape[0] != self.M:
            raise ValueError("H must have M rows")
        self.batch_ids.append(batch_id)
        self.hs.append(h)

    def columns(self) -> list:
        return [h.shape[1] for h in self.hs]

    def ranks(self, f: GF) -> list:
        return [f.rank(h) for h in self.hs]

    def rank_distribution(self, f: GF) -> RankDistribution:
        return empirical_rank_dist(self.ranks(f), self.M)


# -- primitive operations --------------------------------------------------

def apply_link(packets, eps: float, latency: int, stream: RandomStream):
    """Drop each packet independently with probability eps; survivors are
    delayed by `latency` slots. Packets are (slot, tag, cv) triples."""
    if not packets:
        return []
    keep = stream.gen.random(len(packets)) >= eps
    return [(s + latency, tag, cv)
            for (s, tag, cv), k in zip(packets, keep) if k]


def recode(f: GF, packets, out_count: int, stream: RandomStream):
    """Totally-random linear combinations of one batch's packets.

    Coding vectors transform identically to payloads, so only the vectors
    are tracked. Empty input emits nothing (the relay stays silent)."""
    if not packets:
        return []
    tags = {t for _, t, _ in packets}
    if len(tags) != 1:
        raise ValueError(f"cross-batch recode attempted: tags {tags}")
    tag = tags.pop()
    X = np.stack([cv for _, _, cv in packets], axis=1)  # (R, k)
    coeff = stream.integers(0, f.q, size=(len(packets), out_count))
    out = f.matmul(X, coeff)
    return [(tag, out[:, j]) for j in range(out_count)]


def _stage(f, arrivals, n_out, capacity, stream, emit_per_slot=1,
           buffers=None):
    """One relay node on one batch.

    The node stores up to `capacity` arrivals; any final arrivals beyond
    capacity are only usable in the slot they arrive, which is when the
    node starts transmitting. It then emits n_out recoded packets, the
    first emission drawing on the stored packets plus those in-slot
    stragglers, the rest on the stored packets alone.
    """
    buf = NodeBuffer(capacity)
    if buffers is not None:
        buffers.append(buf)
    arrivals = sorted(arrivals, key=lambda p: p[0])
    extra = [p for p in arrivals if not buf.push(p)]
    start = max((s for s, _, _ in arrivals), default=0)
    k1 = min(emit_per_slot, n_out)
    emitted = recode(f, buf.items + extra, k1, stream)
    if n_out > k1:
        emitted += recode(f, buf.items, n_out - k1, stream)
    return [(start + j // emit_per_slot, tag, cv)
            for j, (tag, cv) in enumerate(emitted)]


def homogenize(topology: NetworkTopology, n_h: int) -> NetworkTopology:
    """Replace each link of erasure eps by (1-eps)*n_h parallel links of
    erasure 1 - 1/n_h; per-link capacity drops to 1/n_h so every cut keeps
    its value."""
    if n_h < 1:
        raise ValueError("n_h must be >= 1")
    new_links = []
    for ln in topology.links:
        k = (1.0 - ln.eps) * n_h
        if abs(k - round(k)) > 1e-9:
            raise ValueError(
                f"(1-eps)*n_h = {k} not integral for link "
                f"{ln.src}->{ln.dst}; pick a different n_h")
        new_links.extend(
            replace(ln, eps=1.0 - 1.0 / n_h) for _ in range(int(round(k))))
    return NetworkTopology(topology.nodes, tuple(new_links))


def min_cut(topology: NetworkTopology, dst: str, src: str | None = None):
    """Min-cut value from source to dst with per-link capacity 1 - eps."""
    g = nx.DiGraph()
    g.add_nodes_from(n for n, _ in topology.nodes)
    for ln in topology.links:
        cap = 1.0 - ln.eps
        if g.has_edge(ln.src, ln.dst):
            g[ln.src][ln.dst]["capacity"] += cap
        else:
            g.add_edge(ln.src, ln.dst, capacity=cap)
    return nx.maximum_flow_value(g, src or topology.source, dst)


def shrink_batch(M: int, eps: float, delta: float) -> int:
    """Shrunk outer batch size when the inner code runs at M over erasure
    eps with margin delta."""
    frac = 1.0 - eps + delta
    if not 0.0 < frac <= 1.0:
        raise ValueError("need 0 < 1 - eps + delta <= 1")
    mt = int(round(M * frac))
    if mt < 1:
        raise ValueError("shrunk batch size rounds below 1")
    return mt


def expansion_matrix(f: GF, m_tilde: int, M: int,
                     stream: RandomStream) -> np.ndarray:
    """Totally random m_tilde x M map from outer packets to inner slots."""
    return stream.integers(0, f.q, size=(m_tilde, M))


def edge_disjoint_paths(topology: NetworkTopology, dst: str) -> list:
    """Edge-disjoint source->dst paths as lists of Links.

    Max-flow with unit edge capacities, then a deterministic decomposition
    that always walks to the smallest-id next node.
    """
    g = nx.DiGraph()
    g.add_nodes_from(n for n, _ in topology.nodes)
    for ln in topology.links:
        if g.has_edge(ln.src, ln.dst):
            g[ln.src][ln.dst]["capacity"] += 1
        else:
            g.add_edge(ln.src, ln.dst, capacity=1)
    src = topology.source
    _, flow = nx.maximum_flow(g, src, dst)
    # usable[(u, v)] = units of flow not yet assigned to a path
    usable = {(u, v): int(f) for u, d in flow.items()
              for v, f in d.items() if f > 0}
    pool = defaultdict(list)
    for i, ln in enumerate(topology.links):
        pool[(ln.src, ln.dst)].append(ln)
    for key in pool:
        pool[key].sort(key=lambda ln: ln.eps)
    paths = []
    while True:
        path = []
        node = src
        while node != dst:
            nxt = sorted(v for (u, v), c in usable.items()
                         if u == node and c > 0)
            if not nxt:
                break
            v = nxt[0]
            usable[(node, v)] -= 1
            path.append(pool[(node, v)].pop(0))
            node = v
        if node != dst:
            break
        paths.append(path)
    return paths


# -- scheme runners --------------------------------------------------------

def _source_packets(M, tag, rows, offset=0):
    """M unit-coding-vector packets sent over M consecutive slots."""
    out = []
    for t in range(M):
        cv = np.zeros(rows, dtype=np.uint8)
        cv[offset + t] = 1
        out.append((t, tag, cv))
    return out


def _run_line_batch(f, hops, M, tag, stream, buffers=None, packets=None):
    """Propagate one batch down a list of Links; returns received packets."""
    cur = packets if packets is not None else _source_packets(M, tag, M)
    for i, ln in enumerate(hops):
        cur = apply_link(cur, ln.eps, ln.latency, stream)
        if i < len(hops) - 1:
            cur = _stage(f, cur, M, M - 1, stream, buffers=buffers)
    return cur


def _collect(trace, tag, packets, rows):
    cvs = [cv for _, _, cv in packets]
    h = (np.stack(cvs, axis=1) if cvs
         else np.zeros((rows, 0), dtype=np.uint8))
    trace.add(tag, h)


def _line_path(topology: NetworkTopology) -> list:
    """The unique source->destination path of a line topology."""
    node = topology.source
    hops = []
    seen = {node}
    while True:
        outs = topology.links_from(node)
        if not outs:
            break
        if len(outs) != 1:
            raise ValueError("Line scheme needs a single outgoing link "
                             f"at {node}")
        hops.append(outs[0])
        node = outs[0].dst
        if node in seen:
            raise ValueError("line loops")
        seen.add(node)
    if node not in topology.destinations:
        raise ValueError("line does not end at a destination")
    return hops


def run_scheme(topology: NetworkTopology, cfg: SchemeConfig,
               psi=None, buffers=None):
    """Simulate cfg.n batches; returns {destination: DestinationTrace}.

    `buffers` (optional list) collects every NodeBuffer created, for
    auditing the capacity bounds.
    """
    if cfg.n_h is not None:
        topology = homogenize(topology, cfg.n_h)
    f = GF(int(cfg.q).bit_length() - 1)
    base = RandomStream(cfg.seed)
    runner = _SCHEME_RUNNERS[cfg.scheme]
    return runner(topology, cfg, f, base, buffers)


def _run_line(topology, cfg, f, base, buffers):
    hops = _line_path(topology)
    dest = hops[-1].dst
    rows = cfg.m_tilde if cfg.m_tilde is not None else cfg.M
    trace = DestinationTrace(dest, rows)
    for b in range(cfg.n):
        st = base.derive("net", b)
        got = _run_line_batch(f, hops, cfg.M, b, st, buffers)
        cvs = [cv for _, _, cv in got]
        h = (np.stack(cvs, axis=1) if cvs
             else np.zeros((cfg.M, 0), dtype=np.uint8))
        if cfg.m_tilde is not None:
            E = expansion_matrix(f, cfg.m_tilde, cfg.M,
                                 base.derive("expand", b))
            h = f.matmul(E, h)
        trace.add(b, h)
    return {dest: trace}


def _run_unicast_multipath(topology, cfg, f, base, buffers):
    dests = topology.destinations
    if len(dests) != 1:
        raise ValueError("unicast schemes need exactly one destination")
    dest = dests[0]
    paths = edge_disjoint_paths(topology, dest)
    if not paths:
        raise ValueError("no source->destination path")
    trace = DestinationTrace(dest, cfg.M)
    for b in range(cfg.n):
        st = base.derive("net", b)
        hops = paths[b % len(paths)]
        got = _run_line_batch(f, hops, cfg.M, b, st, buffers)
        _collect(trace, b, got, cfg.M)
    return {dest: trace}


def _two_way_shape(topology):
    hops = _line_path(topology)
    if len(hops) != 2:
        raise ValueError("two-way relay needs the 3-node line shape")
    return hops


def _run_two_way(topology, cfg, f, base, buffers, pnc=False):
    """Two opposing flows through one relay; each endpoint cancels its own
    contribution, leaving the opposite flow's transfer matrix."""
    ln1, ln2 = _two_way_shape(topology)
    end_a, relay, end_b = ln1.src, ln1.dst, ln2.dst
    M = cfg.M
    tr_a = DestinationTrace(end_a, M)  # flow B -> A after cancellation
    tr_b = DestinationTrace(end_b, M)  # flow A -> B
    for b in range(cfg.n):
        st = base.derive("net", b)
        # uplinks: flow A over the s-r link, flow B over the r-t link
        up_a = apply_link(_source_packets(M, b, 2 * M, 0),
                          ln1.eps, ln1.latency, st)
        up_b = apply_link(_source_packets(M, b, 2 * M, M),
                          ln2.eps, ln2.latency, st)
        if pnc:
            combined = _pnc_combine(f, up_a, up_b, st)
            out = _stage(f, combined, M, M - 1, st, buffers=buffers)
        else:
            out_a = _stage(f, up_a, M, M - 1, st, buffers=buffers)
            out_b = _stage(f, up_b, M, M - 1, st, buffers=buffers)
            out = _sum_aligned(f, out_a, out_b)
        down_b = apply_link(out, ln2.eps, ln2.latency, st)
        down_a = apply_link(out, ln1.eps, ln1.latency, st)
        # B cancels its own (bottom) half, keeping flow A; A keeps flow B
        _collect_half(tr_b, b, down_b, M, top=True)
        _collect_half(tr_a, b, down_a, M, top=False)
    return {end_a: tr_a, end_b: tr_b}


def _pnc_combine(f, up_a, up_b, stream):
    """Per-slot three-outcome relay observation: both packets clear ->
    random nonzero combination; one clears -> that packet; none -> silence.
    """
    by_slot = defaultdict(dict)
    for s, tag, cv in up_a:
        by_slot[s]["a"] = (tag, cv)
    for s, tag, cv in up_b:
        by_slot[s]["b"] = (tag, cv)
    out = []
    for s in sorted(by_slot):
        got = by_slot[s]
        if len(got) == 2:
            (tag, cva), (_, cvb) = got["a"], got["b"]
            al, be = stream.integers(1, f.q, size=2)
            cv = f.mul(cva, np.uint8(al)) ^ f.mul(cvb, np.uint8(be))
            out.append((s, tag, cv))
        else:
            (tag, cv), = got.values()
            out.append((s, tag, cv))
    return out


def _sum_aligned(f, out_a, out_b):
    """Field addition of per-slot packets from the two directions."""
    by_slot = defaultdict(list)
    for s, tag, cv in out_a + out_b:
        by_slot[s].append((tag, cv))
    out = []
    for s in sorted(by_slot):
        items = by_slot[s]
        tag = items[0][0]
        cv = items[0][1].copy()
        for _, other in items[1:]:
            cv ^= other
        out.append((s, tag, cv))
    return out


def _collect_half(trace, tag, packets, M, top):
    cvs = [cv[:M] if top else cv[M:] for _, _, cv in packets]
    h = (np.stack(cvs, axis=1) if cvs
         else np.zeros((M, 0), dtype=np.uint8))
    trace.add(tag, h)


def _extract_trees(topology):
    """Greedy edge-disjoint out-trees covering every destination."""
    dests = set(topology.destinations)
    unused = list(topology.links)
    trees = []
    while True:
        children = defaultdict(list)
        reached = {topology.source}
        frontier = [topology.source]
        taken = []
        while frontier:
            node = frontier.pop(0)
            for ln in sorted((l for l in unused if l.src == node
                              and l.dst not in reached),
                             key=lambda l: l.dst):
                children[node].append(ln)
                taken.append(ln)
                reached.add(ln.dst)
                frontier.append(ln.dst)
        if not dests <= reached:
            break
        trees.append(children)
        for ln in taken:
            unused.remove(ln)
    return trees


def _run_tree(topology, cfg, f, base, buffers):
    trees = _extract_trees(topology)
    if not trees:
        raise ValueError("no source-rooted tree covers all destinations")
    M = cfg.M
    traces = {d: DestinationTrace(d, M) for d in topology.destinations}
    for b in range(cfg.n):
        st = base.derive("net", b)
        children = trees[b % len(trees)]
        # identical recoded packets forwarded on every child link
        pending = [(topology.source, _source_packets(M, b, M))]
        while pending:
            node, pkts = pending.pop(0)
            if node in traces and node != topology.source:
                _collect(traces[node], b, pkts, M)
            for ln in children.get(node, []):
                got = apply_link(pkts, ln.eps, ln.latency, st)
                if ln.dst in children and children[ln.dst]:
                    got = _stage(f, got, M, M - 1, st, buffers=buffers)
                pending.append((ln.dst, got))
    return traces


def _butterfly_shape(topology):
    """s -> {a, b}; a -> {t1, c}; b -> {t2, c}; c -> d; d -> {t1, t2}."""
    s = topology.source
    ab = topology.successors(s)
    if len(ab) != 2:
        raise ValueError("butterfly source needs two outgoing links")
    a, b = ab
    ta = topology.successors(a)
    tb = topology.successors(b)
    shared = set(ta) & set(tb)
    if len(shared) != 1 or len(ta) != 2 or len(tb) != 2:
        raise ValueError("butterfly middle shape mismatch")
    c = shared.pop()
    t1 = next(x for x in ta if x != c)
    t2 = next(x for x in tb if x != c)
    dd = topology.successors(c)
    if len(dd) != 1 or sorted(topology.successors(dd[0])) != sorted([t1, t2]):
        raise ValueError("butterfly bottleneck shape mismatch")
    return s, a, b, c, dd[0], t1, t2


def _link_between(topology, u, v):
    for ln in topology.links:
        if ln.src == u and ln.dst == v:
            return ln
    raise ValueError(f"no link {u}->{v}")


def _run_butterfly(topology, cfg, f, base, buffers, split=False):
    s, a, b, c, d, t1, t2 = _butterfly_shape(topology)
    M = cfg.M
    rows = 2 * M
    tr1 = DestinationTrace(t1, rows)
    tr2 = DestinationTrace(t2, rows)
    L = lambda u, v: _link_between(topology, u, v)
    for bid in range(cfg.n):
        st = base.derive("net", bid)
        # batch of size 2M (or two aligned size-M batches when split):
        # first half over s->a, second half over s->b
        in_a = apply_link(_source_packets(M, bid, rows, 0),
                          L(s, a).eps, L(s, a).latency, st)
        in_b = apply_link(_source_packets(M, bid, rows, M),
                          L(s, b).eps, L(s, b).latency, st)
        # a and b each emit 2 recoded packets per slot, one per outgoing link
        out_a = _stage(f, in_a, 2 * M, M - 1, st, emit_per_slot=2,
                       buffers=buffers)
        out_b = _stage(f, in_b, 2 * M, M - 1, st, emit_per_slot=2,
                       buffers=buffers)
        a_t1, a_c = out_a[0::2], out_a[1::2]
        b_t2, b_c = out_b[0::2], out_b[1::2]
        got_c = (apply_link(a_c, L(a, c).eps, L(a, c).latency, st)
                 + apply_link(b_c, L(b, c).eps, L(b, c).latency, st))
        if split:
            # c adds aligned packets, one from each side per slot
            out_c = _sum_aligned(f, *_split_sides(got_c, M))
        else:
            out_c = _stage(f, got_c, M, 2 * M - 2, st, buffers=buffers)
        got_d = apply_link(out_c, L(c, d).eps, L(c, d).latency, st)
        # d replicates without recoding
        direct1 = apply_link(a_t1, L(a, t1).eps, L(a, t1).latency, st)
        direct2 = apply_link(b_t2, L(b, t2).eps, L(b, t2).latency, st)
        via1 = apply_link(got_d, L(d, t1).eps, L(d, t1).latency, st)
        via2 = apply_link(got_d, L(d, t2).eps, L(d, t2).latency, st)
        _collect(tr1, bid, direct1 + via1, rows)
        _collect(tr2, bid, direct2 + via2, rows)
    return {t1: tr1, t2: tr2}


def _split_sides(packets, M):
    """Partition 2M-row packets by which half of the vector is nonzero."""
    side_a, side_b = [], []
    for s, tag, cv in packets:
        (side_a if cv[:M].any() or not cv[M:].any() else side_b).append(
            (s, tag, cv))
    return side_a, side_b


_SCHEME_RUNNERS = {
    "Line": _run_line,
    "UnicastSplit": _run_unicast_multipath,
    "UnicastJoint": _run_unicast_multipath,
    "TwoWayRelay": lambda *a: _run_two_way(*a, pnc=False),
    "TwoWayRelayPNC": lambda *a: _run_two_way(*a, pnc=True),
    "TreeMulticast": _run_tree,
    "Butterfly": lambda *a: _run_butterfly(*a, split=False),
    "ButterflySplit": lambda *a: _run_butterfly(*a, split=True),
}


def line_topology(eps_list, latency=0) -> NetworkTopology:
    """Convenience builder: source -> v1 -> ... -> destination."""
    eps_list = list(eps_list)
    k = len(eps_list)
    nodes = [("s", "source")]
    nodes += [(f"v{i}", "intermediate") for i in range(1, k)]
    nodes += [("t", "destination")]
    names = [n for n, _ in nodes]
    links = tuple(Link(names[i], names[i + 1], eps_list[i], latency)
                  for i in range(k))
    return NetworkTopology(tuple(nodes), links)
