"""Training-loop tests: loss formulas against frozen hand-computed values,
metric spot checks, checkpoint integrity, and resume determinism."""

import math

import numpy as np
import pytest

from gfse import autodiff as ad
from gfse.autodiff import Tape, Tensor
from gfse.corpus import CorpusSpec, make_corpus
from gfse.graph import Graph
from gfse.labels import spd_label
from gfse.model import TASKS, GFSEConfig, GFSEModel
from gfse.pretrain import (LOG_KEYS, CheckpointFormatError, TrainConfig,
                           TrainDivergence, Trainer, augment_features,
                           cd_accuracy_counts, combined_loss, export_pse,
                           gcl_accuracy_counts, load_checkpoint, loss_cd,
                           loss_gcl, loss_motif, loss_spd, mc_error_sums,
                           model_from_checkpoint, sample_community_pairs,
                           sample_connected_pairs, save_checkpoint,
                           spd_edge_error_sums, walk_features)

TINY = GFSEConfig(walk_steps=4, layers=1, heads=2, hidden_dim=8, out_dim=6,
                  embed_dim=5, dtype="f32")


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture(scope="module")
def small_corpus():
    spec = CorpusSpec(families=("er", "ba"), graphs_per_family=6,
                      min_nodes=8, max_nodes=10, seed=3)
    return make_corpus(spec)


def make_trainer(corpus, **overrides):
    kw = dict(model=TINY, batch_size=4, max_epochs=3, patience=10, seed=1)
    kw.update(overrides)
    return Trainer(TrainConfig(**kw), corpus)


# ---------------------------------------------------------------------------
# config

def test_train_config_round_trip():
    cfg = TrainConfig(model=TINY, lr=0.01, batch_size=8, tau=0.2, seed=7)
    again = TrainConfig.from_obj(cfg.to_obj())
    assert again == cfg


@pytest.mark.parametrize("kw", [
    {"lr": 0.0}, {"tau": -1.0}, {"margin": -0.5}, {"batch_size": 0},
    {"val_fraction": 1.0}, {"seed": -1}, {"patience": 0},
])
def test_train_config_rejects(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ---------------------------------------------------------------------------
# pair samplers

def test_connected_pairs_respect_components():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    spd = spd_label(g)
    pairs = sample_connected_pairs(spd, 100, np.random.default_rng(0))
    assert pairs.shape == (6, 2)   # 3 per triangle-free component of 3 nodes
    comp = np.asarray(spd.component)
    assert (comp[pairs[:, 0]] == comp[pairs[:, 1]]).all()
    assert (pairs[:, 0] < pairs[:, 1]).all()


def test_connected_pairs_budget_and_uniqueness():
    spd = spd_label(path_graph(10))
    pairs = sample_connected_pairs(spd, 7, np.random.default_rng(1))
    assert pairs.shape == (7, 2)
    assert len({(i, j) for i, j in pairs.tolist()}) == 7


def test_community_pairs_balanced():
    comm = [0] * 4 + [1] * 4
    pairs, y = sample_community_pairs(comm, np.random.default_rng(2))
    intra = 2 * math.comb(4, 2)
    assert y.sum() == intra and (1 - y).sum() == intra
    c = np.asarray(comm)
    same = c[pairs[:, 0]] == c[pairs[:, 1]]
    assert (same == (y == 1)).all()


def test_community_pairs_keep_all_intra_when_inter_scarce():
    comm = [0, 0, 0, 1]
    pairs, y = sample_community_pairs(comm, np.random.default_rng(3))
    assert y.sum() == 3 and (1 - y).sum() == 3   # only 3 inter pairs exist


# ---------------------------------------------------------------------------
# loss formulas, frozen values

def test_spd_loss_zero_predictor_path4():
    g = path_graph(4)
    spd = spd_label(g)
    model = GFSEModel(TINY, seed=0)
    for k, p in model.params.items():
        if k.startswith("head_spd."):
            p.data[...] = 0.0
    node, rel = walk_features(g, TINY.walk_steps)
    pse = model.forward(g, node, rel)
    pairs = sample_connected_pairs(spd, 100, np.random.default_rng(0))
    # distances over diameter 3: two 1/3 pairs... squares sum to 20/9 over 6
    assert loss_spd(model, pse, spd, pairs).item() == pytest.approx(
        20.0 / 54.0, rel=1e-6)


def test_spd_loss_rejects_empty():
    model = GFSEModel(TINY, seed=0)
    g = path_graph(4)
    node, rel = walk_features(g, TINY.walk_steps)
    pse = model.forward(g, node, rel)
    with pytest.raises(ValueError, match="empty"):
        loss_spd(model, pse, spd_label(g), np.zeros((0, 2), dtype=int))


def test_motif_loss_zero_predictor_triangle_column():
    # every node of K4 sits in 3 triangles; log1p(3) = log 4
    preds = Tensor(np.zeros((4, 1)))
    counts = np.full((4, 1), 3.0)
    assert loss_motif(preds, counts).item() == pytest.approx(
        math.log(4.0) ** 2, rel=1e-12)


def test_motif_loss_rejects_width_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        loss_motif(Tensor(np.zeros((4, 2))), np.zeros((4, 3)))


def test_cd_loss_hand_value():
    z = Tensor(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    pairs = np.array([[0, 1], [0, 2], [1, 2]])
    y = np.array([1.0, 0.0, 0.0])
    # pair (0,1): pull 1-1=0; pairs (0,2),(1,2): push relu(1-(1-0))=0
    assert loss_cd(z, pairs, y, 1.0).item() == pytest.approx(0.0, abs=1e-12)
    # margin 1.5 leaves 0.5 slack on both push pairs
    assert loss_cd(z, pairs, y, 1.5).item() == pytest.approx(1.0 / 3.0,
                                                             rel=1e-6)


def test_cd_loss_rejects_zero_norm():
    z = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="zero-norm"):
        loss_cd(z, np.array([[0, 1]]), np.array([1.0]), 1.0)


def test_gcl_polarized_embeddings_reach_minus_twenty():
    zg = Tensor(np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]))
    tags = ["a", "a", "b", "b"]
    v = loss_gcl(zg, tags, 0.1, 1, np.random.default_rng(0)).item()
    assert v == pytest.approx(-20.0, abs=1e-9)


def test_gcl_identical_embeddings():
    zg = Tensor(np.ones((4, 3)))
    tags = ["a", "a", "b", "b"]
    assert loss_gcl(zg, tags, 0.1, 1,
                    np.random.default_rng(0)).item() == pytest.approx(0.0,
                                                                      abs=1e-9)
    # K equal-similarity negatives shift the value by log K
    assert loss_gcl(zg, tags, 0.1, 2,
                    np.random.default_rng(0)).item() == pytest.approx(
        math.log(2.0), rel=1e-12)


def test_gcl_ragged_matches_reference():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(5, 4))
    tags = ["a", "a", "b", "b", "b"]
    tau = 0.25
    got = loss_gcl(Tensor(z), tags, tau, 3, np.random.default_rng(7)).item()
    zn = z / np.sqrt((z * z).sum(1, keepdims=True) + 1e-24)
    sims = zn @ zn.T
    total = 0.0
    for i, t in enumerate(tags):
        pos = [j for j in range(5) if j != i and tags[j] == t]
        neg = [j for j in range(5) if tags[j] != t]  # <= 3 here, no subsample
        a = sims[i, neg] / tau
        m = a.max()
        total += m + math.log(np.exp(a - m).sum()) - sims[i, pos].mean() / tau
    assert got == pytest.approx(total / 5, rel=1e-12)


def test_gcl_requires_positive_and_negative():
    zg = Tensor(np.eye(3))
    with pytest.raises(ValueError, match="positive"):
        loss_gcl(zg, ["a", "b", "c"], 0.1, 2, np.random.default_rng(0))
    with pytest.raises(ValueError, match="negative"):
        loss_gcl(zg, ["a", "a", "a"], 0.1, 2, np.random.default_rng(0))


def test_combined_loss_value_and_s_gradients():
    values = {"spd": 0.3, "mc": 2.0, "cd": 0.7, "gcl": -1.2}
    params = {f"s.{t}": Tensor(np.asarray(0.5 * k), requires_grad=True)
              for k, t in enumerate(TASKS)}
    with Tape() as tape:
        losses = {t: ad.add_const(ad.scale(Tensor(np.asarray(0.0)), 0.0),
                                  values[t]) for t in TASKS}
        total = combined_loss(losses, params)
    grads = tape.backward(total)
    expect = sum(math.exp(-0.5 * k) * values[t] + 0.25 * k
                 for k, t in enumerate(TASKS))
    assert total.item() == pytest.approx(expect, rel=1e-12)
    for k, t in enumerate(TASKS):
        s = 0.5 * k
        g = float(grads.get(params[f"s.{t}"]))
        assert g == pytest.approx(-math.exp(-s) * values[t] + 0.5, rel=1e-10)


def test_combined_loss_all_zero_s_is_plain_sum():
    params = {f"s.{t}": Tensor(np.asarray(0.0), requires_grad=True)
              for t in TASKS}
    losses = {t: Tensor(np.asarray(v))
              for t, v in zip(TASKS, (1.0, 2.0, 3.0, 4.0))}
    assert combined_loss(losses, params).item() == pytest.approx(10.0)


def test_uncertainty_optimum_halves_contribution():
    # at s = log(2L) the term exp(-s) L + s/2 has zero derivative in s
    L = math.e
    s = math.log(2 * L)
    params = {f"s.{t}": Tensor(np.asarray(s), requires_grad=True)
              for t in TASKS}
    with Tape() as tape:
        losses = {t: ad.add_const(ad.scale(Tensor(np.asarray(0.0)), 0.0), L)
                  for t in TASKS}
        total = combined_loss(losses, params)
    grads = tape.backward(total)
    for t in TASKS:
        assert float(grads.get(params[f"s.{t}"])) == pytest.approx(0.0,
                                                                   abs=1e-12)


# ---------------------------------------------------------------------------
# metrics

def test_cd_accuracy_counts():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert cd_accuracy_counts(z, [0, 0, 1]) == (3, 3)
    # labels [0, 1, 1]: only pair (0, 2) is classified correctly
    assert cd_accuracy_counts(z, [0, 1, 1]) == (1, 3)


def test_gcl_accuracy_counts():
    zg = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    assert gcl_accuracy_counts(zg, ["a", "a", "b"]) == (3, 3)
    zg2 = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert gcl_accuracy_counts(zg2, ["a", "a", "b"]) == (1, 3)


def test_gcl_accuracy_random_embeddings_near_chance():
    rng = np.random.default_rng(11)
    zg = rng.normal(size=(60, 9))
    tags = ["a"] * 30 + ["b"] * 30
    ok, total = gcl_accuracy_counts(zg, tags)
    assert total == math.comb(60, 2)
    assert 0.42 <= ok / total <= 0.58


def test_spd_edge_error_sums_targets():
    g = path_graph(3)
    spd = spd_label(g)
    model = GFSEModel(TINY, seed=4)
    node, rel = walk_features(g, TINY.walk_steps)
    pse = model.forward(g, node, rel)
    sq, cnt = spd_edge_error_sums(model, pse, g, spd)
    preds = model.spd_head(pse, [0, 1], [1, 2]).data[:, 0].astype(np.float64)
    assert cnt == 2
    assert sq == pytest.approx(((preds - 0.5) ** 2).sum(), rel=1e-12)


def test_mc_error_sums_raw_space():
    preds = np.log1p(np.array([[2.0, 4.0], [0.0, 1.0]]))
    counts = np.array([[3.0, 3.0], [0.0, 0.0]])
    ab, cnt = mc_error_sums(preds, counts)
    assert cnt == 2
    assert ab == pytest.approx(3.0, rel=1e-9)


# ---------------------------------------------------------------------------
# trainer loop

def test_trainer_split_stratified(small_corpus):
    tr = make_trainer(small_corpus)
    assert len(tr.val_split) == 4          # max(2, round(0.2 * 6)) per family
    assert {tg.family for tg in tr.val_split} == {"er", "ba"}
    train_idx = {tg.index for fam in tr.train_split.values() for tg in fam}
    val_idx = {tg.index for tg in tr.val_split}
    assert not train_idx & val_idx
    assert len(train_idx) + len(val_idx) == 12


def test_trainer_batches_stratified(small_corpus):
    tr = make_trainer(small_corpus)
    batches = tr._epoch_batches(1)
    assert len(batches) == 2               # 4 train graphs per family, 2 each
    for batch in batches:
        fams = [tg.family for tg in batch]
        assert fams.count("er") == 2 and fams.count("ba") == 2


def test_trainer_rejects_small_batch(small_corpus):
    with pytest.raises(ValueError, match="batch_size"):
        make_trainer(small_corpus, batch_size=3)


def test_trainer_rejects_wrong_motif_width(small_corpus):
    bad = GFSEConfig(walk_steps=4, layers=1, heads=2, hidden_dim=8,
                     out_dim=6, embed_dim=5, motif_dim=5, dtype="f32")
    with pytest.raises(ValueError, match="motif_dim"):
        make_trainer(small_corpus, model=bad)


def test_run_logs_all_keys_and_epoch_zero(small_corpus):
    tr = make_trainer(small_corpus, max_epochs=2)
    hist = tr.run()
    assert [r["epoch"] for r in hist] == [0, 1, 2]
    for row in hist:
        assert set(row) == set(LOG_KEYS)
        for t in TASKS:
            assert math.isfinite(row[f"sigma2_{t}"])
            assert row[f"sigma2_{t}"] > 0


def test_early_stopping_with_patience_one(small_corpus):
    tr = make_trainer(small_corpus, max_epochs=50, patience=1, lr=0.5)
    hist = tr.run()
    assert tr.stopped
    assert hist[-1]["epoch"] < 50


def test_divergence_raises(small_corpus):
    tr = make_trainer(small_corpus)
    tr.model.params["s.spd"].data[()] = -800.0   # exp(800) overflows
    with pytest.raises(TrainDivergence, match="epoch 1, batch 0"):
        tr.run_one_epoch()


def test_training_reduces_losses(small_corpus):
    tr = make_trainer(small_corpus, max_epochs=6)
    hist = tr.run()
    assert hist[-1]["loss_total"] < hist[0]["loss_total"]
    assert hist[-1]["loss_mc"] < hist[0]["loss_mc"]


# ---------------------------------------------------------------------------
# checkpointing

def test_checkpoint_round_trip_bitwise(tmp_path, small_corpus):
    tr = make_trainer(small_corpus, max_epochs=2)
    tr.run()
    path = str(tmp_path / "a.ckpt")
    tr.save(path)
    ck = load_checkpoint(path)
    model = model_from_checkpoint(ck)
    for k, p in tr.model.params.items():
        assert np.array_equal(p.data, model.params[k].data), k
        assert p.data.dtype == model.params[k].data.dtype
    assert ck.step == tr.opt.t
    assert ck.progress == tr.progress()
    assert ck.train_cfg == tr.cfg
    assert ck.uncertainty == {t: tr.model.params[f"s.{t}"].item()
                              for t in TASKS}


def test_checkpoint_forward_bit_identical(tmp_path, small_corpus):
    tr = make_trainer(small_corpus, max_epochs=1)
    tr.run()
    path = str(tmp_path / "b.ckpt")
    tr.save(path)
    model = model_from_checkpoint(load_checkpoint(path))
    tg = small_corpus.graphs[0]
    node, rel = walk_features(tg.graph, TINY.walk_steps)
    a = tr.model.forward(tg.graph, node, rel).data
    b = model.forward(tg.graph, node, rel).data
    assert np.array_equal(a, b)


def test_resume_matches_uninterrupted(tmp_path, small_corpus):
    cfgkw = dict(max_epochs=10)
    straight = make_trainer(small_corpus, **cfgkw)
    for _ in range(4):
        straight.run_one_epoch()

    first = make_trainer(small_corpus, **cfgkw)
    for _ in range(2):
        first.run_one_epoch()
    path = str(tmp_path / "mid.ckpt")
    first.save(path)
    resumed = Trainer.resume(path, small_corpus)
    assert resumed.epoch == 2
    for _ in range(2):
        resumed.run_one_epoch()

    for k, p in straight.model.params.items():
        assert np.array_equal(p.data, resumed.model.params[k].data), k
    assert straight.opt.t == resumed.opt.t
    for k in straight.opt.m:
        assert np.array_equal(straight.opt.m[k], resumed.opt.m[k]), k
        assert np.array_equal(straight.opt.v[k], resumed.opt.v[k]), k


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(str(p))


def test_checkpoint_rejects_truncation(tmp_path, small_corpus):
    tr = make_trainer(small_corpus)
    path = str(tmp_path / "t.ckpt")
    tr.save(path)
    raw = open(path, "rb").read()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(str(cut))


def test_checkpoint_detects_tampered_uncertainty(tmp_path, small_corpus):
    tr = make_trainer(small_corpus)
    path = str(tmp_path / "u.ckpt")
    tr.save(path)
    raw = bytearray(open(path, "rb").read())
    hlen = int.from_bytes(raw[8:16], "little")
    off = 16 + hlen                        # first scalar of the summary block
    raw[off:off + 8] = np.float64(123.456).tobytes()
    bad = tmp_path / "tampered.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="disagrees"):
        load_checkpoint(str(bad))


# ---------------------------------------------------------------------------
# export and augmentation

def test_export_shape_and_determinism(small_corpus):
    model = GFSEModel(TINY, seed=2)
    g = small_corpus.graphs[0].graph
    a = export_pse(model, g)
    b = export_pse(model, g)
    assert a.shape == (g.n, TINY.out_dim)
    assert np.array_equal(a, b)


def test_augment_concatenates_columns():
    x0 = np.arange(6.0).reshape(3, 2)
    pse = np.ones((3, 4))
    out = augment_features(x0, pse)
    assert out.shape == (3, 6)
    assert np.array_equal(out[:, :2], x0)
    assert np.array_equal(out[:, 2:], pse)


def test_augment_rejects_row_mismatch():
    with pytest.raises(ValueError, match="row count"):
        augment_features(np.ones((3, 2)), np.ones((4, 2)))
