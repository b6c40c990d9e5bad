import numpy as np
import pytest

import gfse.corpus as corpus_mod
from gfse.corpus import (Corpus, CorpusSpec, corpus_from_obj, corpus_to_obj,
                         generate_graph, make_corpus)
from gfse.graph import is_connected

SMALL = CorpusSpec(families=("er", "ba"), graphs_per_family=4,
                   min_nodes=8, max_nodes=14, seed=5)


def test_spec_validation():
    with pytest.raises(ValueError, match="at least 2"):
        CorpusSpec(families=("er",))
    with pytest.raises(ValueError, match="unknown"):
        CorpusSpec(families=("er", "triangle-soup"))
    with pytest.raises(ValueError, match="duplicate"):
        CorpusSpec(families=("er", "er"))
    with pytest.raises(ValueError):
        CorpusSpec(graphs_per_family=0)
    with pytest.raises(ValueError):
        CorpusSpec(min_nodes=10, max_nodes=8)


def test_corpus_counts_tags_and_sizes():
    c = make_corpus(SMALL)
    assert len(c.graphs) == 8
    assert [tg.index for tg in c.graphs] == list(range(8))
    assert [tg.family for tg in c.graphs] == ["er"] * 4 + ["ba"] * 4
    for tg in c.graphs:
        assert SMALL.min_nodes <= tg.graph.n <= SMALL.max_nodes
        assert is_connected(tg.graph)
        assert min(tg.graph.degree(v) for v in range(tg.graph.n)) >= 1
        assert tg.motif.shape == (tg.graph.n, 29)
        assert tg.spd.dist.shape == (tg.graph.n, tg.graph.n)
        assert len(tg.communities) == tg.graph.n


def test_every_family_generates_connected_graphs():
    spec = CorpusSpec(graphs_per_family=3, min_nodes=8, max_nodes=24, seed=1)
    c = make_corpus(spec)
    assert len(c.graphs) == 12
    fams = c.by_family()
    assert set(fams) == {"er", "ba", "ws", "sbm"}
    for tgs in fams.values():
        assert len(tgs) == 3
        for tg in tgs:
            assert is_connected(tg.graph)


def test_same_seed_reproduces_corpus_exactly():
    a = make_corpus(SMALL)
    b = make_corpus(SMALL)
    for x, y in zip(a.graphs, b.graphs):
        assert x.graph.edges() == y.graph.edges()
        np.testing.assert_array_equal(x.motif, y.motif)
        np.testing.assert_array_equal(x.spd.dist, y.spd.dist)
        assert x.communities == y.communities
    c = make_corpus(CorpusSpec(families=("er", "ba"), graphs_per_family=4,
                               min_nodes=8, max_nodes=14, seed=6))
    assert any(x.graph.edges() != y.graph.edges()
               for x, y in zip(a.graphs, c.graphs))


def test_worker_count_does_not_change_output():
    seq = make_corpus(SMALL, workers=1)
    par = make_corpus(SMALL, workers=2)
    for x, y in zip(seq.graphs, par.graphs):
        assert x.graph.edges() == y.graph.edges()
        np.testing.assert_array_equal(x.motif, y.motif)
        assert x.communities == y.communities


def test_block_model_graphs_show_multiple_communities():
    spec = CorpusSpec(families=("sbm", "er"), graphs_per_family=30,
                      min_nodes=16, max_nodes=32, seed=9)
    hits = 0
    for sample in range(spec.graphs_per_family):
        g = generate_graph("sbm", spec, sample)
        tg = corpus_mod._label_graph(g, spec, "sbm", sample)
        if len(set(tg.communities)) >= 2:
            hits += 1
    assert hits >= 27  # >= 90% of 30


def test_json_round_trip():
    a = make_corpus(SMALL)
    b = corpus_from_obj(corpus_to_obj(a))
    assert b.spec == a.spec
    for x, y in zip(a.graphs, b.graphs):
        assert x.graph.edges() == y.graph.edges()
        assert x.family == y.family
        np.testing.assert_array_equal(x.spd.dist, y.spd.dist)
        np.testing.assert_array_equal(x.motif, y.motif)
        assert x.communities == y.communities
        assert x.spd.component_diameter == y.spd.component_diameter
        assert x.modularity == pytest.approx(y.modularity)


def test_generator_gives_up_after_retries(monkeypatch):
    def always_split(rng, n):
        return [(0, 1)]  # leaves nodes 2.. isolated, never connected

    monkeypatch.setitem(corpus_mod._GENERATORS, "er", always_split)
    with pytest.raises(RuntimeError, match="no connected graph"):
        generate_graph("er", SMALL, 0)
