"""Synthetic multi-family training corpora.

Four generator families (uniform random, preferential attachment, rewired
ring lattice, planted blocks) produce connected graphs in a configured
size range, each tagged with its family and bundled with precomputed
structural labels. Generation is fully seeded: the same spec yields the
same corpus byte for byte, at any worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from .graph import Graph, from_edge_list, is_connected
from .labels import (SpdLabel, graphlet_catalog, louvain_communities,
                     motif_counts, spd_label)

FAMILIES = ("er", "ba", "ws", "sbm")
MAX_ATTEMPTS = 400  # sparse generators near the connectivity limit need room


@dataclass(frozen=True)
class CorpusSpec:
    families: tuple[str, ...] = FAMILIES
    graphs_per_family: int = 100
    min_nodes: int = 8
    max_nodes: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.families) < 2:
            raise ValueError("need at least 2 families for cross-family negatives")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown families: {sorted(unknown)}")
        if len(set(self.families)) != len(self.families):
            raise ValueError("duplicate family names")
        if self.graphs_per_family <= 0:
            raise ValueError("graphs_per_family must be positive")
        if not 2 <= self.min_nodes <= self.max_nodes:
            raise ValueError("need 2 <= min_nodes <= max_nodes")

    def to_obj(self) -> dict:
        return {"families": list(self.families),
                "graphs_per_family": self.graphs_per_family,
                "min_nodes": self.min_nodes, "max_nodes": self.max_nodes,
                "seed": self.seed}

    @classmethod
    def from_obj(cls, obj: dict) -> "CorpusSpec":
        obj = dict(obj)
        if "families" in obj:
            obj["families"] = tuple(obj["families"])
        return cls(**obj)


@dataclass(frozen=True)
class TaggedGraph:
    """One corpus entry: structure, family tag, and all task labels."""

    graph: Graph
    family: str
    index: int
    spd: SpdLabel
    motif: np.ndarray          # (n, k) int64
    communities: list[int]
    modularity: float


@dataclass
class Corpus:
    spec: CorpusSpec
    graphs: list[TaggedGraph] = field(default_factory=list)

    def by_family(self) -> dict[str, list[TaggedGraph]]:
        out: dict[str, list[TaggedGraph]] = {f: [] for f in self.spec.families}
        for tg in self.graphs:
            out[tg.family].append(tg)
        return out


# ---------------------------------------------------------------------------
# generators; each draws parameters from its rng and returns an edge list

def _gen_er(rng, n: int) -> list[tuple[int, int]]:
    # constant expected degree, connectivity enforced by the retry loop:
    # sparse uniform graphs keep real cluster structure, so the partition
    # labels reflect the graph instead of sampling noise
    c = rng.uniform(2.8, 3.8)
    p = min(1.0, c / n)
    ii, jj = np.triu_indices(n, 1)
    keep = rng.random(ii.size) < p
    return list(zip(ii[keep].tolist(), jj[keep].tolist()))


def _gen_ba(rng, n: int) -> list[tuple[int, int]]:
    m = int(rng.integers(1, 3))  # trees and near-trees keep branch clusters
    m = min(m, n - 1)
    edges = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    repeated = [v for e in edges for v in e]
    for v in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            edges.append((v, t))
            repeated += [v, t]
    return edges


def _gen_ws(rng, n: int) -> list[tuple[int, int]]:
    half = 2
    beta = rng.uniform(0.05, 0.15)  # light rewiring, ring arcs stay intact
    present = {(i, (i + d) % n) for i in range(n) for d in range(1, half + 1)}
    present = {(min(a, b), max(a, b)) for a, b in present}
    edges = sorted(present)
    out = set(edges)
    for (a, b) in edges:
        if rng.random() >= beta:
            continue
        for _ in range(20):  # local retry; duplicate targets are common at small n
            t = int(rng.integers(n))
            cand = (min(a, t), max(a, t))
            if t != a and cand not in out:
                out.discard((a, b))
                out.add(cand)
                break
    return sorted(out)


def _gen_sbm(rng, n: int) -> list[tuple[int, int]]:
    blocks = 2 if n < 24 else int(rng.integers(2, 4))
    sizes = [n // blocks + (1 if r < n % blocks else 0) for r in range(blocks)]
    label = np.repeat(np.arange(blocks), sizes)
    p_in = rng.uniform(0.6, 0.85)
    p_out = rng.uniform(0.02, 0.05)
    ii, jj = np.triu_indices(n, 1)
    prob = np.where(label[ii] == label[jj], p_in, p_out)
    keep = rng.random(ii.size) < prob
    return list(zip(ii[keep].tolist(), jj[keep].tolist()))


_GENERATORS = {"er": _gen_er, "ba": _gen_ba, "ws": _gen_ws, "sbm": _gen_sbm}


def generate_graph(family: str, spec: CorpusSpec, sample: int) -> Graph:
    """One connected graph; retries the generator up to MAX_ATTEMPTS."""
    gen = _GENERATORS[family]
    fam_idx = spec.families.index(family)
    ss = np.random.SeedSequence([spec.seed, fam_idx, sample])
    rng = np.random.default_rng(ss)
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    for _ in range(MAX_ATTEMPTS):
        edges = gen(rng, n)
        if not edges:
            continue
        g, _ = from_edge_list(n, edges)
        if is_connected(g):
            return g
    raise RuntimeError(
        f"family {family!r} sample {sample}: no connected graph in "
        f"{MAX_ATTEMPTS} attempts (n={n})")


def _label_graph(g: Graph, spec: CorpusSpec, family: str,
                 index: int) -> TaggedGraph:
    comm = louvain_communities(g, seed=spec.seed)
    return TaggedGraph(graph=g, family=family, index=index,
                       spd=spd_label(g), motif=motif_counts(g),
                       communities=comm.assignment,
                       modularity=comm.modularity)


def _build_one(args) -> TaggedGraph:
    spec, family, index, sample = args
    g = generate_graph(family, spec, sample)
    return _label_graph(g, spec, family, index)


def make_corpus(spec: CorpusSpec, workers: int = 1) -> Corpus:
    jobs = []
    index = 0
    for family in spec.families:
        for sample in range(spec.graphs_per_family):
            jobs.append((spec, family, index, sample))
            index += 1
    if workers > 1:
        with Pool(workers) as pool:
            graphs = pool.map(_build_one, jobs, chunksize=4)
    else:
        graphs = [_build_one(j) for j in jobs]
    return Corpus(spec, list(graphs))


# ---------------------------------------------------------------------------
# serialization: JSON with the spec followed by one object per graph

def corpus_to_obj(c: Corpus) -> dict:
    entries = []
    for tg in c.graphs:
        entries.append({
            "family": tg.family,
            "index": tg.index,
            "n": tg.graph.n,
            "edges": [[int(a), int(b)] for a, b in tg.graph.edges()],
            "spd": tg.spd.dist.tolist(),
            "motif": tg.motif.tolist(),
            "catalog_k": graphlet_catalog().k,
            "community": list(tg.communities),
            "modularity": tg.modularity,
        })
    return {"spec": c.spec.to_obj(), "graphs": entries}


def corpus_from_obj(obj: dict) -> Corpus:
    spec = CorpusSpec.from_obj(obj["spec"])
    graphs = []
    for e in obj["graphs"]:
        g = Graph.from_edges(e["n"], [tuple(p) for p in e["edges"]])
        dist = np.asarray(e["spd"], dtype=np.int32)
        comp, diam = _components_from_dist(dist)
        graphs.append(TaggedGraph(
            graph=g, family=e["family"], index=e["index"],
            spd=SpdLabel(dist, comp, diam),
            motif=np.asarray(e["motif"], dtype=np.int64),
            communities=list(e["community"]),
            modularity=float(e["modularity"])))
    return Corpus(spec, graphs)


def _components_from_dist(dist: np.ndarray) -> tuple[list[int], list[int]]:
    n = dist.shape[0]
    comp = [-1] * n
    diam: list[int] = []
    for v in range(n):
        if comp[v] >= 0:
            continue
        c = len(diam)
        members = [u for u in range(n) if dist[v, u] >= 0]
        for u in members:
            comp[u] = c
        diam.append(int(dist[np.ix_(members, members)].max(initial=0)))
    return comp, diam


def save_corpus(path: str, c: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(corpus_to_obj(c), fh)


def load_corpus(path: str) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return corpus_from_obj(json.load(fh))
