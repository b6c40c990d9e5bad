"""Structural label extraction: distances, motif counts, communities.

Motif counting classifies every connected induced subgraph of size 3..5
against a catalog of the 29 connected graphs of those sizes (2 + 6 + 21,
ordered by size then canonical bytes). Subgraphs are enumerated once each
via exclusive-neighborhood extension, then classified through a precomputed
lookup from the induced adjacency bit pattern to the catalog index.

Louvain runs the standard two-phase modularity greedy with a seeded node
visit order and first-improvement tie-breaking, so results are reproducible
for a given seed. Cross-component moves always have negative gain, so each
component keeps its own communities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, bfs_distances, connected_components
from .segwl import canonical_form


@dataclass
class SpdLabel:
    """All-pairs hop distances; -1 marks disconnected pairs."""
    dist: np.ndarray              # (n, n) int32, symmetric, zero diagonal
    component: list[int]
    component_diameter: list[int]  # per component label

    def diameter(self) -> int | float:
        if len(self.component_diameter) > 1:
            return math.inf
        return self.component_diameter[0] if self.component_diameter else 0

    def pair_diameter(self, i: int, j: int) -> int:
        """Diameter of the component containing both; -1 if split."""
        if self.component[i] != self.component[j]:
            return -1
        return self.component_diameter[self.component[i]]


def spd_label(g: Graph) -> SpdLabel:
    n = g.n
    dist = np.full((n, n), -1, dtype=np.int32)
    for v in range(n):
        dist[v] = bfs_distances(g, v)
    comp = connected_components(g)
    n_comp = max(comp) + 1 if n else 0
    diam = [0] * n_comp
    for i in range(n):
        row = dist[i]
        c = comp[i]
        m = int(row.max(initial=0))
        if m > diam[c]:
            diam[c] = m
    return SpdLabel(dist, comp, diam)


# ---------------------------------------------------------------------------
# graphlet catalog and per-node motif counts

@dataclass(frozen=True)
class GraphletCatalog:
    graphs: tuple[Graph, ...]
    keys: tuple[bytes, ...]   # canonical forms, aligned with graphs

    @property
    def k(self) -> int:
        return len(self.graphs)

    def index_of(self, key: bytes) -> int:
        return self.keys.index(key)


_catalog_cache: GraphletCatalog | None = None


def graphlet_catalog() -> GraphletCatalog:
    """Connected graphs of sizes 3, 4, 5 in (size, canonical bytes) order."""
    global _catalog_cache
    if _catalog_cache is None:
        from .segwl import enumerate_graphs
        graphs: list[Graph] = []
        for size in (3, 4, 5):
            graphs.extend(enumerate_graphs(size, connected_only=True))
        keys = tuple(canonical_form(g) for g in graphs)
        assert len(set(keys)) == len(keys) == 29
        _catalog_cache = GraphletCatalog(tuple(graphs), keys)
    return _catalog_cache


def _bitcode_tables() -> dict[int, list[int]]:
    """For each size s in 3..5, map induced upper-triangle bit pattern to
    catalog index (-1 when the pattern is disconnected)."""
    cat = graphlet_catalog()
    by_size: dict[int, list[int]] = {}
    for s in (3, 4, 5):
        nbits = s * (s - 1) // 2
        table = [-1] * (1 << nbits)
        for code in range(1 << nbits):
            edges = []
            b = 0
            for col in range(1, s):
                for row in range(col):
                    if (code >> b) & 1:
                        edges.append((row, col))
                    b += 1
            g = Graph.from_edges(s, edges)
            from .graph import is_connected
            if is_connected(g):
                table[code] = cat.index_of(canonical_form(g))
        by_size[s] = table
    return by_size


_bitcode_cache: dict[int, list[int]] | None = None


def _tables() -> dict[int, list[int]]:
    global _bitcode_cache
    if _bitcode_cache is None:
        _bitcode_cache = _bitcode_tables()
    return _bitcode_cache


def _subset_code(nodes: list[int], masks: list[int]) -> int:
    """Upper-triangle bit pattern of the induced subgraph, column-major."""
    code = 0
    b = 0
    for col in range(1, len(nodes)):
        mc = masks[nodes[col]]
        for row in range(col):
            if (mc >> nodes[row]) & 1:
                code |= 1 << b
            b += 1
    return code


def motif_counts(g: Graph) -> np.ndarray:
    """Per-node counts of connected induced subgraphs of sizes 3..5, (n, 29).

    counts[v][t] = number of connected induced subgraphs isomorphic to
    catalog entry t that contain v. Every connected subset is enumerated
    exactly once by anchored exclusive-neighborhood extension.
    """
    cat = graphlet_catalog()
    tables = _tables()
    n = g.n
    masks = g.adjacency_masks()
    counts = np.zeros((n, cat.k), dtype=np.int64)

    def record(sub: list[int]):
        s = len(sub)
        idx = tables[s][_subset_code(sub, masks)]
        # built by connected extension, so idx is never -1
        for v in sub:
            counts[v][idx] += 1

    def extend(sub: list[int], ext: int, nbhd: int, anchor: int):
        if len(sub) >= 3:
            record(sub)
        if len(sub) == 5:
            return
        e = ext
        while e:
            w = (e & -e).bit_length() - 1
            e &= e - 1
            ext = ext & ~(1 << w)  # consume: later branches exclude w
            fresh = masks[w] & ~nbhd & ~(1 << w)
            # new extension candidates: neighbors of w not already adjacent
            # to sub, above the anchor
            add = fresh >> (anchor + 1) << (anchor + 1)
            extend(sub + [w], ext | add, nbhd | masks[w] | (1 << w), anchor)

    for v in range(n):
        ext0 = masks[v] >> (v + 1) << (v + 1)
        extend([v], ext0, masks[v] | (1 << v), v)
    return counts


# ---------------------------------------------------------------------------
# Louvain community detection

def modularity(g: Graph, communities: list[int]) -> float:
    """Standard unweighted modularity of a node-to-community assignment."""
    m = g.num_edges()
    if m == 0:
        raise ValueError("modularity undefined on edgeless graph")
    inside = 0
    tot: dict[int, int] = {}
    for v in range(g.n):
        tot[communities[v]] = tot.get(communities[v], 0) + g.degree(v)
    for u, v in g.edges():
        if communities[u] == communities[v]:
            inside += 1
    q = inside / m
    q -= sum(t * t for t in tot.values()) / (4 * m * m)
    return q


@dataclass
class CommunityLabel:
    assignment: list[int]   # dense community ids
    modularity: float
    passes: int


def _louvain_phase(nodes: int, adj: list[dict[int, float]], self_w: list[float],
                   m2: float, order: list[int]) -> list[int]:
    """One local-move phase on a weighted graph; returns community ids."""
    comm = list(range(nodes))
    k = [self_w[i] * 2 + sum(adj[i].values()) for i in range(nodes)]
    tot = k[:]
    improved = True
    while improved:
        improved = False
        for v in order:
            cv = comm[v]
            # weight from v to each neighboring community
            links: dict[int, float] = {}
            for u, w in adj[v].items():
                links[comm[u]] = links.get(comm[u], 0.0) + w
            tot[cv] -= k[v]
            best_c, best_gain = cv, 0.0
            base = links.get(cv, 0.0) - tot[cv] * k[v] / m2
            for c in sorted(links):
                if c == cv:
                    continue
                gain = links[c] - tot[c] * k[v] / m2
                if gain - base > best_gain + 1e-12:
                    best_gain = gain - base
                    best_c = c
            tot[best_c] += k[v]
            if best_c != cv:
                comm[v] = best_c
                improved = True
    return comm


def louvain_communities(g: Graph, seed: int = 0,
                        restarts: int = 5) -> CommunityLabel:
    """Best-modularity result over seeded restarts of the two-phase greedy.

    The greedy lands in order-dependent local optima; keeping the best of a
    few restarts ties the labels to the graph rather than to one arbitrary
    visit order. Deterministic for a given (seed, restarts)."""
    if restarts <= 0:
        raise ValueError("restarts must be positive")
    best = None
    for r in range(restarts):
        lab = _louvain_run(g, [seed, r])
        if best is None or lab.modularity > best.modularity + 1e-12:
            best = lab
    return best


def _louvain_run(g: Graph, seed_parts: list[int]) -> CommunityLabel:
    """Two-phase modularity greedy; deterministic for given seed parts."""
    if g.num_edges() == 0:
        raise ValueError("community detection needs at least one edge")
    rng = np.random.default_rng(
        np.random.SeedSequence(seed_parts + [g.n, g.num_edges()]))

    # current aggregated graph
    nodes = g.n
    adj: list[dict[int, float]] = [dict() for _ in range(nodes)]
    for u, v in g.edges():
        adj[u][v] = adj[u].get(v, 0.0) + 1.0
        adj[v][u] = adj[v].get(u, 0.0) + 1.0
    self_w = [0.0] * nodes
    m2 = 2.0 * g.num_edges()

    mapping = list(range(g.n))  # original node -> current supernode
    passes = 0
    last_q = None
    while True:
        order = [int(x) for x in rng.permutation(nodes)]
        comm = _louvain_phase(nodes, adj, self_w, m2, order)
        ids: dict[int, int] = {}
        for v in range(nodes):
            comm[v] = ids.setdefault(comm[v], len(ids))
        passes += 1
        q = modularity(g, [comm[mapping[x]] for x in range(g.n)])
        assert last_q is None or q >= last_q - 1e-12, "modularity decreased across phases"
        last_q = q
        if len(ids) == nodes:
            break
        # aggregate
        new_n = len(ids)
        new_adj: list[dict[int, float]] = [dict() for _ in range(new_n)]
        new_self = [0.0] * new_n
        for v in range(nodes):
            cv = comm[v]
            new_self[cv] += self_w[v]
            for u, w in adj[v].items():
                cu = comm[u]
                if cu == cv:
                    if u > v:
                        new_self[cv] += w
                else:
                    new_adj[cv][cu] = new_adj[cv].get(cu, 0.0) + w
        mapping = [comm[mapping[x]] for x in range(g.n)]
        nodes, adj, self_w = new_n, new_adj, new_self

    final = [comm[mapping[x]] for x in range(g.n)]
    # densify ids in first-appearance order
    ids2: dict[int, int] = {}
    final = [ids2.setdefault(c, len(ids2)) for c in final]
    return CommunityLabel(final, modularity(g, final), passes)


def community_pair_labels(assignment: list[int]) -> np.ndarray:
    """Symmetric 0/1 matrix: 1 iff same community; diagonal is 1."""
    a = np.asarray(assignment)
    return (a[:, None] == a[None, :]).astype(np.int8)


# ---------------------------------------------------------------------------
# JSON label bundle

def labels_json_obj(g: Graph, seed: int = 0) -> dict:
    spd = spd_label(g)
    motif = motif_counts(g)
    comm = louvain_communities(g, seed=seed)
    diam = spd.diameter()
    return {
        "spd": spd.dist.tolist(),
        "diameter": -1 if diam == math.inf else int(diam),
        "motif": motif.tolist(),
        "catalog_k": graphlet_catalog().k,
        "community": comm.assignment,
        "modularity": comm.modularity,
    }
