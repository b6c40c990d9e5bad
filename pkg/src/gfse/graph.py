"""Immutable undirected graph container plus graph6 and JSON serialization.

Graphs are simple: no self-loops, no duplicate edges, nodes are 0..n-1.
Adjacency is stored CSR-style (offsets + flattened sorted neighbor lists)
with every edge present in both directions.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field


class GraphFormatError(ValueError):
    """Raised for malformed graph6 or graph JSON input."""


@dataclass(frozen=True)
class Graph:
    n: int
    offsets: tuple[int, ...]
    neighbors: tuple[int, ...]

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Build a Graph, silently collapsing duplicate edges."""
        g, _ = from_edge_list(n, edges)
        return g

    def degree(self, v: int) -> int:
        return self.offsets[v + 1] - self.offsets[v]

    def neighbors_of(self, v: int) -> tuple[int, ...]:
        return self.neighbors[self.offsets[v]:self.offsets[v + 1]]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edge list with u < v, sorted."""
        out = []
        for u in range(self.n):
            for v in self.neighbors_of(u):
                if u < v:
                    out.append((u, v))
        return out

    def num_edges(self) -> int:
        return len(self.neighbors) // 2

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors_of(u)
        lo, hi = 0, len(row)
        while lo < hi:
            mid = (lo + hi) // 2
            if row[mid] < v:
                lo = mid + 1
            else:
                hi = mid
        return lo < len(row) and row[lo] == v

    def adjacency_masks(self) -> list[int]:
        """Per-node neighbor bitmasks; requires n <= 62 callers beware width."""
        masks = [0] * self.n
        for u in range(self.n):
            m = 0
            for v in self.neighbors_of(u):
                m |= 1 << v
            masks[u] = m
        return masks


@dataclass
class GraphFamily:
    """A list of graphs under one tag (enumeration order, corpus family, ...)."""
    graphs: list[Graph]
    tag: str = ""
    node_count: int | None = None

    def __post_init__(self):
        if self.node_count is not None:
            for i, g in enumerate(self.graphs):
                if g.n != self.node_count:
                    raise ValueError(
                        f"family declares n={self.node_count} but graph {i} has n={g.n}")

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)


def from_edge_list(n: int, edges) -> tuple[Graph, int]:
    """Build a Graph from (u, v) pairs.

    Returns (graph, duplicate_count). Duplicate edges (either orientation)
    are collapsed. Self-loops and out-of-range endpoints raise ValueError.
    """
    if n < 0:
        raise ValueError(f"negative node count {n}")
    seen: set[tuple[int, int]] = set()
    dups = 0
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
        key = (u, v) if u < v else (v, u)
        if key in seen:
            dups += 1
        else:
            seen.add(key)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in seen:
        adj[u].append(v)
        adj[v].append(u)
    offsets = [0] * (n + 1)
    flat: list[int] = []
    for v in range(n):
        adj[v].sort()
        flat.extend(adj[v])
        offsets[v + 1] = len(flat)
    return Graph(n, tuple(offsets), tuple(flat)), dups


def degrees(g: Graph) -> list[int]:
    return [g.degree(v) for v in range(g.n)]


def bfs_distances(g: Graph, src: int) -> list[int]:
    """Hop distances from src; -1 marks unreachable nodes."""
    dist = [-1] * g.n
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        du = dist[u]
        for w in g.neighbors_of(u):
            if dist[w] < 0:
                dist[w] = du + 1
                q.append(w)
    return dist


def connected_components(g: Graph) -> list[int]:
    """Component label per node, labels dense in discovery order."""
    label = [-1] * g.n
    c = 0
    for s in range(g.n):
        if label[s] >= 0:
            continue
        label[s] = c
        q = deque([s])
        while q:
            u = q.popleft()
            for w in g.neighbors_of(u):
                if label[w] < 0:
                    label[w] = c
                    q.append(w)
        c += 1
    return label


def is_connected(g: Graph) -> bool:
    if g.n == 0:
        return True
    return bfs_distances(g, 0).count(-1) == 0


def diameter(g: Graph) -> int | float:
    """Longest shortest path; math.inf when the graph is disconnected."""
    if g.n == 0:
        return 0
    best = 0
    for v in range(g.n):
        dist = bfs_distances(g, v)
        if -1 in dist:
            return math.inf
        best = max(best, max(dist))
    return best


# ---------------------------------------------------------------------------
# graph6 (single-byte header form, n <= 62)

_G6_MAX_N = 62


def parse_graph6(record: str | bytes) -> Graph:
    """Decode one graph6 record (no trailing newline)."""
    if isinstance(record, str):
        data = record.encode("ascii", errors="replace")
    else:
        data = bytes(record)
    if not data:
        raise GraphFormatError("empty graph6 record")
    for off, b in enumerate(data):
        if not (63 <= b <= 126):
            raise GraphFormatError(
                f"byte {b} at offset {off} outside graph6 range 63..126")
    n = data[0] - 63
    if n > _G6_MAX_N:
        # multi-byte headers start at 126; unsupported here
        raise GraphFormatError(
            f"header byte at offset 0 encodes n={n}; only n <= {_G6_MAX_N} supported")
    nbits = n * (n - 1) // 2
    nbytes = (nbits + 5) // 6
    body = data[1:]
    if len(body) != nbytes:
        raise GraphFormatError(
            f"expected {nbytes} body bytes for n={n}, got {len(body)} (offset {len(data)})")
    bits = 0
    for b in body:
        bits = (bits << 6) | (b - 63)
    pad = nbytes * 6 - nbits
    if pad and bits & ((1 << pad) - 1):
        raise GraphFormatError("nonzero padding bits at end of record")
    bits >>= pad
    edges = []
    # column-major upper triangle: (0,1), (0,2), (1,2), (0,3), ...
    pos = nbits
    for col in range(1, n):
        for row in range(col):
            pos -= 1
            if (bits >> pos) & 1:
                edges.append((row, col))
    g, _ = from_edge_list(n, edges)
    return g


def write_graph6(g: Graph) -> str:
    """Encode a Graph as a graph6 record (n <= 62)."""
    n = g.n
    if n > _G6_MAX_N:
        raise ValueError(f"graph6 single-byte header supports n <= {_G6_MAX_N}, got {n}")
    nbits = n * (n - 1) // 2
    bits = 0
    for col in range(1, n):
        for row in range(col):
            bits = (bits << 1) | (1 if g.has_edge(row, col) else 0)
    nbytes = (nbits + 5) // 6
    bits <<= nbytes * 6 - nbits
    out = [chr(n + 63)]
    for k in range(nbytes - 1, -1, -1):
        out.append(chr(((bits >> (6 * k)) & 63) + 63))
    return "".join(out)


def read_graph6_file(path: str) -> list[Graph]:
    """One record per line; blank lines and '#' comments skipped."""
    graphs = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                graphs.append(parse_graph6(line))
            except GraphFormatError as e:
                raise GraphFormatError(f"{path}:{lineno}: {e}") from e
    return graphs


def write_graph6_file(path: str, graphs) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for g in graphs:
            fh.write(write_graph6(g) + "\n")


# ---------------------------------------------------------------------------
# JSON graph format: {"n": int, "edges": [[u, v], ...]} or a list of such

def graph_from_json_obj(obj) -> Graph:
    if not isinstance(obj, dict) or "n" not in obj or "edges" not in obj:
        raise GraphFormatError('graph JSON object needs "n" and "edges"')
    n = obj["n"]
    if not isinstance(n, int) or n < 0:
        raise GraphFormatError(f'invalid "n": {n!r}')
    edges = []
    for i, e in enumerate(obj["edges"]):
        if (not isinstance(e, (list, tuple))) or len(e) != 2:
            raise GraphFormatError(f"edge {i} is not a pair: {e!r}")
        edges.append((int(e[0]), int(e[1])))
    try:
        g, _ = from_edge_list(n, edges)
    except ValueError as e:
        raise GraphFormatError(str(e)) from e
    return g


def graph_to_json_obj(g: Graph) -> dict:
    return {"n": g.n, "edges": [[u, v] for u, v in g.edges()]}


def read_graph_json(path: str) -> list[Graph]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        return [graph_from_json_obj(o) for o in data]
    return [graph_from_json_obj(data)]


def read_graphs(path: str) -> list[Graph]:
    """Dispatch on extension: .g6 / .graph6 vs .json."""
    if path.endswith((".g6", ".graph6")):
        return read_graph6_file(path)
    if path.endswith(".json"):
        return read_graph_json(path)
    raise GraphFormatError(f"cannot infer graph format from path {path!r}")
