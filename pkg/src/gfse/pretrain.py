"""Self-supervised pre-training over a synthetic corpus.

Four task losses (pairwise distance regression, per-node subgraph-count
regression, community-contrastive, family-contrastive) are combined with
learned per-task uncertainty weights and minimized with Adam. The loop is
bit-deterministic for a fixed seed: every random draw comes from a seed
sequence keyed by (seed, purpose, epoch, item), so a run resumed from a
checkpoint replays exactly the run that was interrupted.

Checkpoints are a small binary container documented in the README:
magic, version, config JSON, the four uncertainty scalars, the training
step, then named little-endian tensors (parameters plus optimizer state).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .corpus import Corpus, TaggedGraph
from .graph import Graph
from .labels import SpdLabel
from .model import TASKS, GFSEConfig, GFSEModel
from .walks import node_rw_encoding, relative_rw_encoding

# seed-sequence purpose tags; fixed forever for checkpoint compatibility
_SPLIT, _SHUFFLE, _SPD, _CD, _GCL = 101, 102, 103, 104, 105
_EVAL_SPD, _EVAL_CD, _EVAL_GCL = 106, 107, 108

CHECKPOINT_MAGIC = b"GFSE"
CHECKPOINT_VERSION = 1


class TrainDivergence(RuntimeError):
    """Raised when a training step produces a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    model: GFSEConfig = field(default_factory=GFSEConfig)
    lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    tau: float = 0.1
    margin: float = 1.0
    spd_pairs_per_node: int = 4
    gcl_negatives: int = 12  # covers the whole cross-family set at batch 16
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("lr and tau must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        for f in ("batch_size", "max_epochs", "patience",
                  "spd_pairs_per_node", "gcl_negatives"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_obj(self) -> dict:
        obj = {f: getattr(self, f) for f in
               ("lr", "batch_size", "max_epochs", "patience", "tau", "margin",
                "spd_pairs_per_node", "gcl_negatives", "val_fraction", "seed")}
        obj["model"] = json.loads(self.model.to_json())
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        model = GFSEConfig(**obj.pop("model")) if "model" in obj else GFSEConfig()
        return cls(model=model, **obj)


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


def walk_features(g: Graph, d: int) -> tuple[np.ndarray, np.ndarray]:
    node = node_rw_encoding(g, d, mode="float").values
    rel = relative_rw_encoding(g, d, mode="float").values
    return node, rel


# ---------------------------------------------------------------------------
# pair samplers

def sample_connected_pairs(spd: SpdLabel, budget: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Up to `budget` unordered connected pairs, uniformly without replacement."""
    dist = spd.dist
    n = dist.shape[0]
    ii, jj = np.triu_indices(n, 1)
    ok = dist[ii, jj] > 0
    ii, jj = ii[ok], jj[ok]
    if ii.size > budget:
        sel = np.sort(rng.choice(ii.size, size=budget, replace=False))
        ii, jj = ii[sel], jj[sel]
    return np.stack([ii, jj], axis=1)


def sample_community_pairs(communities: list[int],
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """All same-community pairs plus an equal count of sampled rest pairs."""
    comm = np.asarray(communities)
    n = comm.size
    ii, jj = np.triu_indices(n, 1)
    same = comm[ii] == comm[jj]
    intra = np.stack([ii[same], jj[same]], axis=1)
    inter = np.stack([ii[~same], jj[~same]], axis=1)
    if inter.shape[0] > intra.shape[0] and intra.shape[0] > 0:
        sel = np.sort(rng.choice(inter.shape[0], size=intra.shape[0],
                                 replace=False))
        inter = inter[sel]
    pairs = np.concatenate([intra, inter], axis=0)
    y = np.concatenate([np.ones(intra.shape[0]), np.zeros(inter.shape[0])])
    return pairs, y


# ---------------------------------------------------------------------------
# task losses (autodiff tensors in, scalar tensor out)

def loss_spd(model: GFSEModel, pse: Tensor, spd: SpdLabel,
             pairs: np.ndarray) -> Tensor:
    """Mean squared error of predicted vs diameter-normalized distances."""
    if pairs.shape[0] == 0:
        raise ValueError("empty pair set")
    ii, jj = pairs[:, 0], pairs[:, 1]
    comp = np.asarray(spd.component)
    diam = np.asarray(spd.component_diameter, dtype=np.float64)[comp[ii]]
    targets = spd.dist[ii, jj] / diam
    preds = model.spd_head(pse, ii, jj)
    t = Tensor(targets.reshape(-1, 1).astype(preds.data.dtype))
    return ad.mse(preds, t)


def loss_motif(preds: Tensor, counts: np.ndarray) -> Tensor:
    """Per-node squared error on log1p-transformed counts, averaged over nodes."""
    if preds.shape != counts.shape:
        raise ValueError(f"catalog size mismatch: predictions {preds.shape} "
                         f"vs labels {counts.shape}")
    n = counts.shape[0]
    t = Tensor(np.log1p(counts).astype(preds.data.dtype))
    diff = ad.sub(preds, t)
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / n)


def loss_cd(z: Tensor, pairs: np.ndarray, y: np.ndarray,
            margin: float) -> Tensor:
    """Community contrast: pull same-community pairs to cosine 1, push the
    rest until 1 - sim reaches the margin. Mean over pairs."""
    if pairs.shape[0] == 0:
        raise ValueError("empty pair set")
    if (np.linalg.norm(z.data, axis=1) == 0).any():
        raise ValueError("zero-norm embedding")
    dt = z.data.dtype
    m = pairs.shape[0]
    sims = ad.cosine_rows(ad.gather_rows(z, pairs[:, 0]),
                          ad.gather_rows(z, pairs[:, 1]))
    one_minus = ad.sub(Tensor(np.ones(m, dt)), sims)
    pull = ad.mul(Tensor(y.astype(dt)), one_minus)
    gap = ad.sub(Tensor(np.full(m, margin, dt)), one_minus)
    push = ad.mul(Tensor((1.0 - y).astype(dt)), ad.relu(gap))
    return ad.scale(ad.sum_all(ad.add(pull, push)), 1.0 / m)


def _mean_rows_grouped(zg: Tensor, groups: list[list[int]]) -> Tensor:
    """Row i of the result: mean cosine of zg[i] against its group's rows."""
    b = zg.shape[0]
    rep = np.repeat(np.arange(b), [len(grp) for grp in groups])
    flat = [j for grp in groups for j in grp]
    sims = ad.cosine_rows(ad.gather_rows(zg, rep), ad.gather_rows(zg, flat))
    weights = np.zeros((b, len(flat)), dtype=zg.data.dtype)
    off = 0
    for i, grp in enumerate(groups):
        weights[i, off:off + len(grp)] = 1.0 / len(grp)
        off += len(grp)
    col = ad.matmul(Tensor(weights), ad.reshape(sims, (len(flat), 1)))
    return ad.reshape(col, (b,))


def loss_gcl(zg: Tensor, tags: list[str], tau: float, negatives: int,
             rng: np.random.Generator) -> Tensor:
    """Family contrast over graph embeddings.

    Per anchor: -log(exp(sim_pos/tau) / sum_negs exp(sim_neg/tau)), averaged
    over every same-family positive and up to `negatives` cross-family
    negatives. Averaging the positives instead of sampling one keeps the
    sampled estimator's expectation while cutting its batch-to-batch
    variance. The denominator holds negatives only, so the value may be
    negative when the positives outscore every negative.
    """
    b = len(tags)
    if zg.shape[0] != b:
        raise ValueError("one tag per embedding row required")
    if (np.linalg.norm(zg.data, axis=1) == 0).any():
        raise ValueError("zero-norm embedding")
    pos_lists = []
    neg_lists = []
    for i, tag in enumerate(tags):
        pos = [j for j in range(b) if j != i and tags[j] == tag]
        if not pos:
            raise ValueError(f"anchor {i} has no same-family positive")
        neg = [j for j in range(b) if tags[j] != tag]
        if not neg:
            raise ValueError(f"anchor {i} has no cross-family negative")
        pos_lists.append(pos)
        if len(neg) > negatives:
            sel = np.sort(rng.choice(len(neg), size=negatives, replace=False))
            neg = [neg[s] for s in sel]
        neg_lists.append(neg)
    sims_pos = _mean_rows_grouped(zg, pos_lists)
    counts = {len(l) for l in neg_lists}
    flat = [j for lst in neg_lists for j in lst]
    rep = np.repeat(np.arange(b), [len(l) for l in neg_lists])
    sims_neg = ad.scale(ad.cosine_rows(ad.gather_rows(zg, rep),
                                       ad.gather_rows(zg, flat)), 1.0 / tau)
    if len(counts) == 1:
        k = counts.pop()
        lse = ad.log_sum_exp(ad.reshape(sims_neg, (b, k)))
        per_anchor = ad.sub(lse, ad.scale(sims_pos, 1.0 / tau))
        return ad.scale(ad.sum_all(per_anchor), 1.0 / b)
    # ragged negative counts: reduce anchor by anchor
    sims_neg_col = ad.reshape(sims_neg, (len(flat), 1))
    sims_pos_col = ad.reshape(ad.scale(sims_pos, 1.0 / tau), (b, 1))
    total = None
    off = 0
    for i, lst in enumerate(neg_lists):
        block = ad.gather_rows(sims_neg_col, np.arange(off, off + len(lst)))
        off += len(lst)
        lse = ad.log_sum_exp(ad.reshape(block, (1, len(lst))))
        term = ad.sub(lse, ad.reshape(ad.gather_rows(sims_pos_col, [i]), (1,)))
        total = term if total is None else ad.add(total, term)
    return ad.scale(ad.sum_all(total), 1.0 / b)


def combined_loss(task_losses: dict[str, Tensor],
                  params: dict[str, Tensor]) -> Tensor:
    """Uncertainty weighting: sum of exp(-s_t) L_t + s_t / 2."""
    total = None
    for t in TASKS:
        s = params[f"s.{t}"]
        term = ad.add(ad.mul(ad.exp(ad.scale(s, -1.0)), task_losses[t]),
                      ad.scale(s, 0.5))
        total = term if total is None else ad.add(total, term)
    return total


def combined_value(task_values: dict[str, float],
                   model: GFSEModel) -> float:
    total = 0.0
    for t in TASKS:
        s = model.params[f"s.{t}"].item()
        total += math.exp(-s) * task_values[t] + 0.5 * s
    return total


# ---------------------------------------------------------------------------
# evaluation metrics (plain numpy on detached predictions)

def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    return a / np.maximum(norms, 1e-12)


def cd_accuracy_counts(z: np.ndarray, communities: list[int]) -> tuple[int, int]:
    """Pairs correctly classified as same-community by sim >= 0.5, over all
    unordered pairs."""
    zn = _unit_rows(np.asarray(z, dtype=np.float64))
    sims = zn @ zn.T
    comm = np.asarray(communities)
    ii, jj = np.triu_indices(len(communities), 1)
    pred_same = sims[ii, jj] >= 0.5
    is_same = comm[ii] == comm[jj]
    return int((pred_same == is_same).sum()), int(ii.size)


def gcl_accuracy_counts(zg: np.ndarray, tags: list[str]) -> tuple[int, int]:
    """Graph pairs correctly classified as same-family by sim >= 0."""
    zn = _unit_rows(np.asarray(zg, dtype=np.float64))
    sims = zn @ zn.T
    t = np.asarray(tags)
    ii, jj = np.triu_indices(len(tags), 1)
    pred_same = sims[ii, jj] >= 0.0
    is_same = t[ii] == t[jj]
    return int((pred_same == is_same).sum()), int(ii.size)


def spd_edge_error_sums(model: GFSEModel, pse: Tensor, g: Graph,
                        spd: SpdLabel) -> tuple[float, int]:
    """Squared-error sum of edge-distance predictions vs 1/diameter targets."""
    edges = g.edges()
    ii = np.array([a for a, _ in edges])
    jj = np.array([b for _, b in edges])
    comp = np.asarray(spd.component)
    diam = np.asarray(spd.component_diameter, dtype=np.float64)[comp[ii]]
    targets = spd.dist[ii, jj] / diam
    preds = model.spd_head(pse, ii, jj).data[:, 0].astype(np.float64)
    return float(((preds - targets) ** 2).sum()), len(edges)


def mc_error_sums(preds: np.ndarray, counts: np.ndarray) -> tuple[float, int]:
    """L1 error in raw count space (predictions are log1p-space)."""
    raw = np.expm1(preds.astype(np.float64))
    return float(np.abs(raw - counts).sum()), counts.shape[0]


LOG_KEYS = ("epoch", "loss_total", "loss_spd", "loss_mc", "loss_cd",
            "loss_gcl", "sigma2_spd", "sigma2_mc", "sigma2_cd", "sigma2_gcl",
            "acc_cd", "acc_gcl", "mse_spd", "mae_mc")


def evaluate(model: GFSEModel, graphs: list[TaggedGraph], cfg: TrainConfig,
             epoch: int, features_of) -> dict:
    """One deterministic validation pass; returns a metrics-log row."""
    if not graphs:
        raise ValueError("empty evaluation set")
    sums = {"spd": 0.0, "mc": 0.0, "cd": 0.0}
    cd_ok = cd_all = 0
    spd_sq = 0.0
    spd_cnt = 0
    mc_abs = 0.0
    mc_cnt = 0
    embs = []
    tags = []
    for tg in graphs:
        node, rel = features_of(tg)
        pse = model.forward(tg.graph, node, rel)
        pairs = sample_connected_pairs(
            tg.spd, cfg.spd_pairs_per_node * tg.graph.n,
            _rng(cfg.seed, _EVAL_SPD, epoch, tg.index))
        sums["spd"] += loss_spd(model, pse, tg.spd, pairs).item()
        motif_pred = model.motif_head(pse)
        sums["mc"] += loss_motif(motif_pred, tg.motif).item()
        z = model.cd_embed(pse)
        cpairs, y = sample_community_pairs(
            tg.communities, _rng(cfg.seed, _EVAL_CD, epoch, tg.index))
        sums["cd"] += loss_cd(z, cpairs, y, cfg.margin).item()
        ok, alln = cd_accuracy_counts(z.data, tg.communities)
        cd_ok += ok
        cd_all += alln
        sq, cnt = spd_edge_error_sums(model, pse, tg.graph, tg.spd)
        spd_sq += sq
        spd_cnt += cnt
        ab, cnt = mc_error_sums(motif_pred.data, tg.motif)
        mc_abs += ab
        mc_cnt += cnt
        embs.append(model.gcl_embed(pse).data[0])
        tags.append(tg.family)
    zg = np.stack(embs)
    gcl = loss_gcl(Tensor(zg), tags, cfg.tau, cfg.gcl_negatives,
                   _rng(cfg.seed, _EVAL_GCL, epoch)).item()
    g_ok, g_all = gcl_accuracy_counts(zg, tags)
    values = {t: sums[t] / len(graphs) for t in ("spd", "mc", "cd")}
    values["gcl"] = gcl
    sig = model.uncertainty()
    row = {"epoch": epoch, "loss_total": combined_value(values, model)}
    for t in TASKS:
        row[f"loss_{t}"] = values[t]
    for t in TASKS:
        row[f"sigma2_{t}"] = sig[t]
    row["acc_cd"] = cd_ok / cd_all
    row["acc_gcl"] = g_ok / g_all
    row["mse_spd"] = spd_sq / spd_cnt
    row["mae_mc"] = mc_abs / mc_cnt
    return row


# ---------------------------------------------------------------------------
# training loop

class Trainer:
    """Deterministic mini-batch loop with family-stratified batches,
    validation-based early stopping, and resumable state."""

    def __init__(self, cfg: TrainConfig, corpus: Corpus, *,
                 model: GFSEModel | None = None,
                 optimizer: Adam | None = None,
                 progress: dict | None = None):
        self.cfg = cfg
        self.corpus = corpus
        fams = corpus.spec.families
        self.per_family = cfg.batch_size // len(fams)
        if self.per_family < 2:
            raise ValueError(
                f"batch_size {cfg.batch_size} cannot fit 2 graphs from each "
                f"of {len(fams)} families")
        if corpus.graphs and corpus.graphs[0].motif.shape[1] != cfg.model.motif_dim:
            raise ValueError(
                f"model motif_dim {cfg.model.motif_dim} does not match corpus "
                f"label width {corpus.graphs[0].motif.shape[1]}")
        self.model = model if model is not None else GFSEModel(cfg.model,
                                                               seed=cfg.seed)
        self.opt = optimizer if optimizer is not None else Adam(
            self.model.params, lr=cfg.lr)
        self.train_split: dict[str, list[TaggedGraph]] = {}
        self.val_split: list[TaggedGraph] = []
        by_fam = corpus.by_family()
        for fi, fam in enumerate(fams):
            graphs = by_fam[fam]
            order = _rng(cfg.seed, _SPLIT, fi).permutation(len(graphs))
            n_val = max(2, int(round(cfg.val_fraction * len(graphs))))
            if len(graphs) - n_val < self.per_family:
                raise ValueError(f"family {fam!r} too small to split: "
                                 f"{len(graphs)} graphs")
            val_ids = set(order[:n_val].tolist())
            self.train_split[fam] = [g for k, g in enumerate(graphs)
                                     if k not in val_ids]
            self.val_split.extend(g for k, g in enumerate(graphs)
                                  if k in val_ids)
        self.val_split.sort(key=lambda tg: tg.index)
        progress = progress or {}
        self.epoch = int(progress.get("epoch", 0))
        bv = progress.get("best_val")
        self.best_val = math.inf if bv is None else float(bv)
        self.bad_epochs = int(progress.get("bad_epochs", 0))
        self.stopped = bool(progress.get("stopped", False))
        self.history: list[dict] = []
        self._features: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def features_of(self, tg: TaggedGraph) -> tuple[np.ndarray, np.ndarray]:
        if tg.index not in self._features:
            self._features[tg.index] = walk_features(tg.graph,
                                                     self.cfg.model.walk_steps)
        return self._features[tg.index]

    def evaluate_now(self) -> dict:
        return evaluate(self.model, self.val_split, self.cfg, self.epoch,
                        self.features_of)

    def _epoch_batches(self, epoch: int) -> list[list[TaggedGraph]]:
        fams = self.corpus.spec.families
        shuffled = {}
        for fi, fam in enumerate(fams):
            graphs = self.train_split[fam]
            order = _rng(self.cfg.seed, _SHUFFLE, epoch, fi).permutation(
                len(graphs))
            shuffled[fam] = [graphs[k] for k in order]
        n_batches = min(len(shuffled[f]) // self.per_family for f in fams)
        batches = []
        for b in range(n_batches):
            batch = []
            for fam in fams:
                lo = b * self.per_family
                batch.extend(shuffled[fam][lo:lo + self.per_family])
            batches.append(batch)
        return batches

    def _train_step(self, batch: list[TaggedGraph], epoch: int,
                    batch_idx: int) -> None:
        cfg = self.cfg
        with Tape() as tape:
            acc: dict[str, Tensor | None] = {"spd": None, "mc": None, "cd": None}
            embs = []
            tags = []
            for tg in batch:
                node, rel = self.features_of(tg)
                pse = self.model.forward(tg.graph, node, rel)
                pairs = sample_connected_pairs(
                    tg.spd, cfg.spd_pairs_per_node * tg.graph.n,
                    _rng(cfg.seed, _SPD, epoch, tg.index))
                terms = {
                    "spd": loss_spd(self.model, pse, tg.spd, pairs),
                    "mc": loss_motif(self.model.motif_head(pse), tg.motif),
                }
                z = self.model.cd_embed(pse)
                cpairs, y = sample_community_pairs(
                    tg.communities, _rng(cfg.seed, _CD, epoch, tg.index))
                terms["cd"] = loss_cd(z, cpairs, y, cfg.margin)
                for t, v in terms.items():
                    acc[t] = v if acc[t] is None else ad.add(acc[t], v)
                embs.append(self.model.gcl_embed(pse))
                tags.append(tg.family)
            b = len(batch)
            losses = {t: ad.scale(acc[t], 1.0 / b) for t in acc}
            losses["gcl"] = loss_gcl(ad.stack_rows(embs), tags, cfg.tau,
                                     cfg.gcl_negatives,
                                     _rng(cfg.seed, _GCL, epoch, batch_idx))
            for t in ("spd", "mc", "cd"):
                assert losses[t].item() >= 0.0, f"negative {t} loss"
            total = combined_loss(losses, self.model.params)
        self.opt.step(tape.backward(total))

    def run_one_epoch(self) -> dict:
        """Train one epoch over all stratified batches, then evaluate."""
        epoch = self.epoch + 1
        for b_idx, batch in enumerate(self._epoch_batches(epoch)):
            try:
                self._train_step(batch, epoch, b_idx)
            except FloatingPointError as err:
                raise TrainDivergence(
                    f"training diverged at epoch {epoch}, batch {b_idx}: "
                    f"{err}") from err
        self.epoch = epoch
        row = self.evaluate_now()
        self.history.append(row)
        if row["loss_total"] < self.best_val:
            self.best_val = row["loss_total"]
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.cfg.patience:
                self.stopped = True
        return row

    def run(self, on_epoch=None) -> list[dict]:
        """Run to max_epochs or early stop; returns all logged rows."""
        if not self.history:
            # log the entry state: epoch 0 on a fresh run, else the
            # checkpointed epoch, so resumed reports are never empty
            row0 = self.evaluate_now()
            self.history.append(row0)
            self.best_val = min(self.best_val, row0["loss_total"])
            if on_epoch:
                on_epoch(row0)
        while self.epoch < self.cfg.max_epochs and not self.stopped:
            row = self.run_one_epoch()
            if on_epoch:
                on_epoch(row)
        return self.history

    def progress(self) -> dict:
        bv = None if math.isinf(self.best_val) else self.best_val
        return {"epoch": self.epoch, "best_val": bv,
                "bad_epochs": self.bad_epochs, "stopped": self.stopped}

    def save(self, path: str) -> None:
        save_checkpoint(path, self.model, self.cfg, optimizer=self.opt,
                        progress=self.progress())

    @classmethod
    def resume(cls, path: str, corpus: Corpus) -> "Trainer":
        ck = load_checkpoint(path)
        model = model_from_checkpoint(ck)
        opt = Adam(model.params, lr=ck.train_cfg.lr)
        if any(k.startswith("opt.") for k in ck.tensors):
            opt.load_state({k: v for k, v in ck.tensors.items()
                            if k.startswith("opt.")})
        return cls(ck.train_cfg, corpus, model=model, optimizer=opt,
                   progress=ck.progress)


# ---------------------------------------------------------------------------
# checkpoint container

_DT_CODE = {"float32": 0, "float64": 1}
_CODE_DT = {0: np.float32, 1: np.float64}


@dataclass
class Checkpoint:
    version: int
    train_cfg: TrainConfig
    tensors: dict[str, np.ndarray]
    uncertainty: dict[str, float]
    step: int
    progress: dict


def save_checkpoint(path: str, model: GFSEModel, train_cfg: TrainConfig,
                    step: int | None = None, optimizer: Adam | None = None,
                    progress: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {k: v.data for k, v in model.params.items()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
        if step is None:
            step = optimizer.t
    header = json.dumps({"train": train_cfg.to_obj(),
                         "progress": progress or {}},
                        sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<Q", len(header))
    buf += header
    for t in TASKS:
        buf += struct.pack("<d", model.params[f"s.{t}"].item())
    buf += struct.pack("<Q", int(step or 0))
    buf += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = tensors[name]
        code = _DT_CODE.get(arr.dtype.name)
        if code is None:
            raise TypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<BI", code, arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.astype("<f4" if code == 0 else "<f8", copy=False).tobytes(
            order="C")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(buf))
    os.replace(tmp, path)


class CheckpointFormatError(ValueError):
    pass


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<Q", take(8))
    header = json.loads(bytes(take(hlen)).decode("utf-8"))
    train_cfg = TrainConfig.from_obj(header["train"])
    uncertainty = {}
    for t in TASKS:
        (val,) = struct.unpack("<d", take(8))
        uncertainty[t] = val
    (step,) = struct.unpack("<Q", take(8))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _CODE_DT:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        width = 4 if code == 0 else 8
        payload = take(size * width)
        arr = np.frombuffer(payload, dtype="<f4" if code == 0 else "<f8")
        tensors[name] = arr.astype(_CODE_DT[code]).reshape(shape)
    if pos != len(raw):
        raise CheckpointFormatError(f"{path}: trailing bytes after tensors")
    for t in TASKS:
        stored = tensors.get(f"s.{t}")
        if stored is None or float(stored) != uncertainty[t]:
            raise CheckpointFormatError(
                f"{path}: uncertainty block disagrees with tensor s.{t}")
    return Checkpoint(version, train_cfg, tensors, uncertainty, step,
                      header.get("progress", {}))


def model_from_checkpoint(ck: Checkpoint) -> GFSEModel:
    params = {name: Tensor(arr.copy(), requires_grad=True)
              for name, arr in ck.tensors.items()
              if not name.startswith("opt.")}
    return GFSEModel(ck.train_cfg.model, params=params)


# ---------------------------------------------------------------------------
# export and downstream augmentation

def export_pse(model: GFSEModel, g: Graph) -> np.ndarray:
    """Encode one graph with a trained model; rows follow node order."""
    node, rel = walk_features(g, model.config.walk_steps)
    return model.forward(g, node, rel).data.copy()


def matrix_csv(mat: np.ndarray) -> str:
    lines = [",".join("%.12g" % v for v in row) for row in np.atleast_2d(mat)]
    return "\n".join(lines) + "\n"


def augment_features(x0: np.ndarray, pse: np.ndarray) -> np.ndarray:
    """Column-concatenate initial features with encodings; x0 columns first."""
    if x0.shape[0] != pse.shape[0]:
        raise ValueError(f"row count mismatch: features have {x0.shape[0]} "
                         f"rows, encodings have {pse.shape[0]}")
    return np.hstack([x0, pse])
