"""Structural-encoding color refinement and graph family reports.

A scheme assigns every node an initial color hash(f_P(v)) and refines by

    g_t(v) = hash({{ (g_{t-1}(u), f_R(v, u)) : u in V }})

aggregating over ALL nodes, except the classic variant which hashes
(own color, sorted neighbor colors). Colors are 16-byte content digests,
so they are comparable across graphs. Refinement stops at the first round
whose node partition equals the previous round's; the partition provably
refines monotonically from a uniform start, giving stability within n
rounds.

A graph's Signature digests (n, stable round, sorted final colors); two
graphs are distinguishable iff signatures differ. Family reports bucket
signatures instead of running all-pairs comparisons.

Schemes:
  classic-wl  neighbor-only refinement, identity initial colors
  neighbor    f_P identity, f_R(v,u) = 1 if edge else 2
  spd         f_P identity, f_R = shortest-path distance ("inf" if none)
  rw          f_P/f_R from exact rational walk encodings, dimension d
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from hashlib import blake2b
from multiprocessing import Pool

from .graph import Graph, GraphFamily, bfs_distances
from .walks import integer_walk_powers

_DIGEST = 16


def _h(data: bytes) -> bytes:
    return blake2b(data, digest_size=_DIGEST).digest()


@dataclass(frozen=True)
class EncodingScheme:
    variant: str
    d: int | None = None

    def __post_init__(self):
        if self.variant not in ("classic-wl", "neighbor", "spd", "rw"):
            raise ValueError(f"unknown scheme variant {self.variant!r}")
        if self.variant == "rw":
            if self.d is None or self.d < 1:
                raise ValueError("rw scheme needs walk dimension d >= 1")
        elif self.d is not None:
            raise ValueError(f"{self.variant} scheme takes no dimension")

    def label(self) -> str:
        return f"rw({self.d})" if self.variant == "rw" else self.variant


CLASSIC_WL = EncodingScheme("classic-wl")
NEIGHBOR = EncodingScheme("neighbor")
SPD = EncodingScheme("spd")


def rw_scheme(d: int) -> EncodingScheme:
    return EncodingScheme("rw", d)


@dataclass
class ColorState:
    """Refinement trace: dense color ids per round plus final content digests."""
    rounds: list[list[int]]
    final_digests: list[bytes]
    stable_round: int

    @property
    def stable(self) -> bool:
        return True

    def num_classes(self) -> int:
        return len(set(self.rounds[-1]))


def _dense_ids(digests: list[bytes]) -> list[int]:
    ids: dict[bytes, int] = {}
    out = []
    for d in digests:
        if d not in ids:
            ids[d] = len(ids)
        out.append(ids[d])
    return out


def _initial_colors(g: Graph, scheme: EncodingScheme) -> list[bytes]:
    if scheme.variant == "rw":
        s, mats = integer_walk_powers(g, scheme.d)
        out = []
        for i in range(g.n):
            parts = []
            for k in range(scheme.d):
                num = mats[k][i][i]
                den = s ** k
                r = math.gcd(num, den)
                parts.append(b"%d/%d" % (num // r, den // r))
            out.append(_h(b",".join(parts)))
        return out
    return [_h(b"unit")] * g.n


def _relational_bytes(g: Graph, scheme: EncodingScheme) -> list[list[bytes]] | None:
    """f_R(v, u) serialized, or None for the classic variant."""
    n = g.n
    if scheme.variant == "classic-wl":
        return None
    if scheme.variant == "neighbor":
        rel = [[b"2"] * n for _ in range(n)]
        for u in range(n):
            for v in g.neighbors_of(u):
                rel[u][v] = b"1"
        return rel
    if scheme.variant == "spd":
        rel = []
        for v in range(n):
            dist = bfs_distances(g, v)
            rel.append([b"inf" if x < 0 else b"%d" % x for x in dist])
        return rel
    # rw: reduced num/den per power, joined
    s, mats = integer_walk_powers(g, scheme.d)
    dens = [s ** k for k in range(scheme.d)]
    rel = []
    for i in range(n):
        row = []
        for j in range(n):
            parts = []
            for k in range(scheme.d):
                num = mats[k][i][j]
                den = dens[k]
                r = math.gcd(num, den)
                parts.append(b"%d/%d" % (num // r, den // r))
            row.append(b",".join(parts))
        rel.append(row)
    return rel


def seg_wl_refine(g: Graph, scheme: EncodingScheme) -> ColorState:
    """Refine to a stable partition; caps at n+1 rounds and asserts stability."""
    n = g.n
    colors = _initial_colors(g, scheme)
    rel = _relational_bytes(g, scheme)
    rounds = [_dense_ids(colors)]
    if n == 0:
        return ColorState(rounds, colors, 0)
    prev_part = rounds[0]
    for t in range(1, n + 2):
        if rel is None:
            new = []
            for v in range(n):
                nb = sorted(colors[u] for u in g.neighbors_of(v))
                new.append(_h(colors[v] + b"|" + b"".join(nb)))
        else:
            new = []
            for v in range(n):
                row = rel[v]
                pairs = sorted(
                    len(row[u]).to_bytes(4, "big") + row[u] + colors[u]
                    for u in range(n)
                )
                new.append(_h(b"".join(pairs)))
        part = _dense_ids(new)
        colors = new
        rounds.append(part)
        if part == prev_part:
            return ColorState(rounds, colors, t)
        # monotone refinement: same round-(t-1) class whenever same round-t class
        back = {}
        for c_new, c_old in zip(part, prev_part):
            assert back.setdefault(c_new, c_old) == c_old, \
                "refinement coarsened a color class"
        prev_part = part
    raise AssertionError(f"refinement did not stabilize within {n + 1} rounds")


def wl_refine(g: Graph) -> ColorState:
    """Classic neighbor-multiset refinement."""
    return seg_wl_refine(g, CLASSIC_WL)


def signature(g: Graph, scheme: EncodingScheme) -> bytes:
    """128-bit digest of the stable color histogram, comparable across graphs."""
    st = seg_wl_refine(g, scheme)
    payload = (
        b"SIG1"
        + g.n.to_bytes(4, "big")
        + st.stable_round.to_bytes(4, "big")
        + b"".join(sorted(st.final_digests))
    )
    return _h(payload)


def distinguishable(g1: Graph, g2: Graph, scheme: EncodingScheme) -> bool:
    return signature(g1, scheme) != signature(g2, scheme)


@dataclass
class FamilyReport:
    scheme: str
    n_graphs: int
    n_pairs: int
    undistinguished_pairs: int
    bucket_sizes: tuple[int, ...]  # descending
    seconds: float = 0.0

    def buckets_equal(self, other: "FamilyReport") -> bool:
        return (self.n_graphs == other.n_graphs
                and self.bucket_sizes == other.bucket_sizes)

    def to_json_obj(self) -> dict:
        return {
            "scheme": self.scheme,
            "graphs": self.n_graphs,
            "pairs": self.n_pairs,
            "undistinguished": self.undistinguished_pairs,
            "bucket_sizes": list(self.bucket_sizes),
            "seconds": round(self.seconds, 3),
        }


def _sig_job(args) -> bytes:
    g, scheme = args
    return signature(g, scheme)


def family_report(family, scheme: EncodingScheme, workers: int = 1) -> FamilyReport:
    """Bucket signatures over a family; undistinguished = sum C(bucket, 2).

    Results are identical for any worker count: the reduce step only counts
    signatures, which is order-independent.
    """
    import time

    graphs = list(family)
    t0 = time.perf_counter()
    if workers > 1 and len(graphs) > 1:
        with Pool(workers) as pool:
            sigs = pool.map(_sig_job, [(g, scheme) for g in graphs],
                            chunksize=max(1, len(graphs) // (workers * 8)))
    else:
        sigs = [signature(g, scheme) for g in graphs]
    counts: dict[bytes, int] = {}
    for s in sigs:
        counts[s] = counts.get(s, 0) + 1
    und = sum(c * (c - 1) // 2 for c in counts.values())
    m = len(graphs)
    return FamilyReport(
        scheme=scheme.label(),
        n_graphs=m,
        n_pairs=m * (m - 1) // 2,
        undistinguished_pairs=und,
        bucket_sizes=tuple(sorted(counts.values(), reverse=True)),
        seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# canonical form (n <= 10): lexicographically minimal upper-triangle bitstring

_CANON_MAX_N = 10


def _canon_masks(n: int, masks: list[int]) -> bytes:
    """Branch-and-bound over vertex orderings, minimizing column bit chunks.

    The bitstring is read column-major: placing vertex v at position k
    contributes bits adj[perm[0..k-1]][v]. Lex order compares columns in
    placement order, so at each position only candidates achieving the
    minimal column need exploring. Tied candidates that are twins (equal
    adjacency rows off {u, v}) yield identical completions; one suffices.
    """
    if n == 0:
        return b""
    best_cols: list[int] | None = None

    def rec(pos: int, placed: list[int], placed_mask: int, cols: list[int]):
        nonlocal best_cols
        if pos == n:
            best_cols = cols[:]
            return
        cands = [v for v in range(n) if not (placed_mask >> v) & 1]
        scored = []
        for v in cands:
            col = 0
            mv = masks[v]
            for p in placed:
                col = (col << 1) | ((mv >> p) & 1)
            scored.append((col, v))
        mincol = min(c for c, _ in scored)
        if best_cols is not None:
            bc = best_cols[pos]
            if mincol > bc:
                return
            if mincol < bc:
                best_cols = None  # prefix improved; current best invalid below pos
        tied = [v for c, v in scored if c == mincol]
        branched: list[int] = []
        for v in tied:
            mv_clean = masks[v] & ~placed_mask
            skip = False
            for u in branched:
                pairbits = (1 << u) | (1 << v)
                if (masks[u] & ~placed_mask) & ~pairbits == mv_clean & ~pairbits:
                    skip = True
                    break
            if skip:
                continue
            branched.append(v)
            placed.append(v)
            cols.append(mincol)
            rec(pos + 1, placed, placed_mask | (1 << v), cols)
            placed.pop()
            cols.pop()
            if best_cols is not None and best_cols[pos] < mincol:
                return

    rec(0, [], 0, [])
    assert best_cols is not None
    bits = 0
    nbits = 0
    for k, col in enumerate(best_cols):
        bits = (bits << k) | col
        nbits += k
    return bytes([n]) + bits.to_bytes((nbits + 7) // 8 or 1, "big")


def canonical_form(g: Graph) -> bytes:
    """Canonical bytes; equal iff graphs are isomorphic. Guard: n <= 10."""
    if g.n > _CANON_MAX_N:
        raise ValueError(f"canonical_form supports n <= {_CANON_MAX_N}, got {g.n}")
    return _canon_masks(g.n, g.adjacency_masks())


def _graph_from_masks(n: int, masks: list[int]) -> Graph:
    edges = []
    for u in range(n):
        m = masks[u] >> (u + 1)
        v = u + 1
        while m:
            if m & 1:
                edges.append((u, v))
            m >>= 1
            v += 1
    return Graph.from_edges(n, edges)


_ENUM_MAX_N = 8


def enumerate_graphs(n: int, connected_only: bool = True) -> GraphFamily:
    """All non-isomorphic simple graphs on n nodes by vertex augmentation.

    Grows from the single 1-node graph: every (n-1)-node representative is
    extended with a new node attached to each subset of old nodes, deduped
    by canonical form. Connectivity filters at the end only. Guard: n <= 8.
    """
    if not (1 <= n <= _ENUM_MAX_N):
        raise ValueError(f"enumeration supports 1 <= n <= {_ENUM_MAX_N}, got {n}")
    level: dict[bytes, list[int]] = {_canon_masks(1, [0]): [0]}
    for m in range(2, n + 1):
        nxt: dict[bytes, list[int]] = {}
        new_bit = 1 << (m - 1)
        for masks in level.values():
            for subset in range(1 << (m - 1)):
                cand = [x | new_bit if (subset >> i) & 1 else x
                        for i, x in enumerate(masks)]
                cand.append(subset)
                key = _canon_masks(m, cand)
                if key not in nxt:
                    nxt[key] = cand
        level = nxt
    graphs = [_graph_from_masks(n, masks)
              for _, masks in sorted(level.items())]
    if connected_only:
        from .graph import is_connected
        graphs = [g for g in graphs if is_connected(g)]
    tag = f"{'connected ' if connected_only else ''}graphs n={n}"
    return GraphFamily(graphs, tag=tag, node_count=n)


# ---------------------------------------------------------------------------
# reference constructions

def shrikhande() -> Graph:
    """Cayley graph on Z4 x Z4 with connection set {±(1,0), ±(0,1), ±(1,1)}."""
    conn = {(1, 0), (3, 0), (0, 1), (0, 3), (1, 1), (3, 3)}
    edges = []
    for a in range(4):
        for b in range(4):
            i = 4 * a + b
            for da, db in conn:
                j = 4 * ((a + da) % 4) + (b + db) % 4
                if i < j:
                    edges.append((i, j))
    return Graph.from_edges(16, edges)


def rook_4x4() -> Graph:
    """4x4 rook's graph: cells adjacent iff same row or same column."""
    edges = []
    for r in range(4):
        for c in range(4):
            i = 4 * r + c
            for c2 in range(c + 1, 4):
                edges.append((i, 4 * r + c2))
            for r2 in range(r + 1, 4):
                edges.append((i, 4 * r2 + c))
    return Graph.from_edges(16, edges)


def is_strongly_regular(g: Graph, n: int, k: int, lam: int, mu: int) -> bool:
    """Check SRG(n, k, lambda, mu) parameters exactly."""
    if g.n != n:
        return False
    masks = g.adjacency_masks()
    for v in range(n):
        if g.degree(v) != k:
            return False
    for u in range(n):
        for v in range(u + 1, n):
            common = bin(masks[u] & masks[v]).count("1")
            want = lam if (masks[u] >> v) & 1 else mu
            if common != want:
                return False
    return True
