"""Hybrid graph encoder over walk features.

Stacks L layers that combine neighborhood message passing with full
self-attention whose logits are biased by pairwise relative features.
Node features P (n, walk_steps) and relative features R (n, n, walk_steps)
are projected to a hidden width, refined layer by layer, and projected to
the output encoding P_out (n, out_dim). Task heads map P_out to pairwise
distance predictions, per-node subgraph-count predictions, and two
contrastive embeddings.

All arithmetic runs through the autodiff ops, so any scalar derived from
the outputs can be differentiated with respect to the parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

TASKS = ("spd", "mc", "cd", "gcl")


@dataclass(frozen=True)
class GFSEConfig:
    """Encoder shape; defaults are desk-scale, not the largest published."""

    walk_steps: int = 8
    layers: int = 3
    heads: int = 4
    hidden_dim: int = 64
    out_dim: int = 32
    embed_dim: int = 32
    motif_dim: int = 29
    dtype: str = "f32"
    static_edges: bool = False

    def __post_init__(self):
        for f in ("walk_steps", "layers", "heads", "hidden_dim", "out_dim",
                  "embed_dim", "motif_dim"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.dtype not in ad.DTYPES:
            raise ValueError(f"dtype must be one of {sorted(ad.DTYPES)}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GFSEConfig":
        obj = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def _glorot(rng, fan_in: int, fan_out: int, shape, dt) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dt)


def init_params(cfg: GFSEConfig, seed: int = 0) -> dict[str, Tensor]:
    """Seeded parameter dict; same seed and config give identical values."""
    rng = np.random.default_rng(np.random.SeedSequence([0x6F5E, seed]))
    dt = ad.DTYPES[cfg.dtype]
    dh, de = cfg.hidden_dim, cfg.out_dim
    dk = dh // cfg.heads
    p: dict[str, Tensor] = {}

    def w(name, fan_in, fan_out, shape=None):
        arr = _glorot(rng, fan_in, fan_out, shape or (fan_in, fan_out), dt)
        p[name] = Tensor(arr, requires_grad=True)

    def zeros(name, shape):
        p[name] = Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    def ones(name, shape):
        p[name] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)

    w("in_p.W", cfg.walk_steps, dh)
    zeros("in_p.b", (dh,))
    w("in_r.W", cfg.walk_steps, dh)
    zeros("in_r.b", (dh,))
    for i in range(cfg.layers):
        pre = f"l{i}."
        ones(pre + "ln1.g", (dh,))
        zeros(pre + "ln1.b", (dh,))
        zeros(pre + "gin.eps", ())
        w(pre + "gin.We", dh, dh)
        w(pre + "gin.W1", dh, dh)
        zeros(pre + "gin.b1", (dh,))
        w(pre + "gin.W2", dh, dh)
        zeros(pre + "gin.b2", (dh,))
        for h in range(cfg.heads):
            w(pre + f"att.h{h}.Wq", dh, dk)
            w(pre + f"att.h{h}.Wk", dh, dk)
            w(pre + f"att.h{h}.Wv", dh, dk)
        w(pre + "att.Wo", dh, dh)
        w(pre + "att.Wb", dh, cfg.heads)
        ones(pre + "ln2.g", (dh,))
        zeros(pre + "ln2.b", (dh,))
        w(pre + "mlp.W1", dh, dh)
        zeros(pre + "mlp.b1", (dh,))
        w(pre + "mlp.W2", dh, dh)
        zeros(pre + "mlp.b2", (dh,))
        if not cfg.static_edges:
            w(pre + "edge.W1", 3 * dh, dh)
            zeros(pre + "edge.b1", (dh,))
            w(pre + "edge.W2", dh, dh)
            zeros(pre + "edge.b2", (dh,))
    w("out.W", dh, de)
    zeros("out.b", (de,))

    w("head_spd.W1", 2 * de, dh)
    zeros("head_spd.b1", (dh,))
    w("head_spd.W2", dh, 1)
    zeros("head_spd.b2", (1,))
    w("head_mc.W1", de, dh)
    zeros("head_mc.b1", (dh,))
    w("head_mc.W2", dh, cfg.motif_dim)
    zeros("head_mc.b2", (cfg.motif_dim,))
    for name in ("head_cd", "head_gcl"):
        w(name + ".W1", de, dh)
        zeros(name + ".b1", (dh,))
        w(name + ".W2", dh, cfg.embed_dim)
        zeros(name + ".b2", (cfg.embed_dim,))
    for task in TASKS:
        zeros(f"s.{task}", ())
    return p


def _mlp2(x: Tensor, p: dict, pre: str) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, p[pre + "W1"]), p[pre + "b1"]))
    return ad.add(ad.matmul(h, p[pre + "W2"]), p[pre + "b2"])


def directed_edges(g: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Both orientations of every edge plus flat n*i+j indices into R."""
    pairs = [(i, j) for i, j in g.edges()] + [(j, i) for i, j in g.edges()]
    if pairs:
        srcs = np.array([i for i, _ in pairs], dtype=np.int64)
        dsts = np.array([j for _, j in pairs], dtype=np.int64)
    else:
        srcs = np.zeros(0, dtype=np.int64)
        dsts = np.zeros(0, dtype=np.int64)
    return srcs, dsts, srcs * g.n + dsts


def gin_message_pass(P: Tensor, R: Tensor, g: Graph, params: dict,
                     prefix: str, cfg: GFSEConfig) -> tuple[Tensor, Tensor]:
    """Neighborhood aggregation plus the residual pairwise-feature update.

    P_M[i] = MLP((1 + eps) P[i] + sum_{j in N(i)} relu(P[j] + We R[i,j]));
    R'[i,j] = R[i,j] + MLP(R[i,j] || P[i] || P[j]), skipped when the
    config freezes pairwise features.
    """
    n = g.n
    srcs, dsts, flat = directed_edges(g)
    edge_r = ad.matmul(ad.gather_rows(R, flat), params[prefix + "gin.We"])
    msgs = ad.relu(ad.add(ad.gather_rows(P, dsts), edge_r))
    agg = ad.scatter_add_rows(msgs, srcs, n)
    self_t = ad.scalar_mul(ad.add_const(params[prefix + "gin.eps"], 1.0), P)
    p_m = _mlp2(ad.add(self_t, agg), params, prefix + "gin.")
    if cfg.static_edges:
        return p_m, R
    ii = np.repeat(np.arange(n), n)
    jj = np.tile(np.arange(n), n)
    cat = ad.concat_last([R, ad.gather_rows(P, ii), ad.gather_rows(P, jj)])
    r_next = ad.add(R, _mlp2(cat, params, prefix + "edge."))
    return p_m, r_next


def biased_attention(P: Tensor, R: Tensor, params: dict, prefix: str,
                     cfg: GFSEConfig, return_attention: bool = False):
    """Multi-head attention over all node pairs with additive logit bias.

    The bias for pair (i, j) is a learned linear map of R[i, j] to one
    scalar per head, added to the scaled dot-product logits before the
    softmax.
    """
    n = P.shape[0]
    dk = cfg.hidden_dim // cfg.heads
    dt = P.data.dtype
    bias_all = ad.matmul(R, params[prefix + "att.Wb"])
    outs = []
    attns = []
    for h in range(cfg.heads):
        q = ad.matmul(P, params[prefix + f"att.h{h}.Wq"])
        k = ad.matmul(P, params[prefix + f"att.h{h}.Wk"])
        v = ad.matmul(P, params[prefix + f"att.h{h}.Wv"])
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dk))
        pick = np.zeros((cfg.heads, 1), dtype=dt)
        pick[h, 0] = 1.0
        bias = ad.reshape(ad.matmul(bias_all, Tensor(pick)), (n, n))
        attn = ad.row_softmax(ad.add(logits, bias))
        attns.append(attn)
        outs.append(ad.matmul(attn, v))
    p_t = ad.matmul(ad.concat_last(outs), params[prefix + "att.Wo"])
    if return_attention:
        return p_t, attns
    return p_t


def gps_layer(P: Tensor, R: Tensor, g: Graph, params: dict, prefix: str,
              cfg: GFSEConfig) -> tuple[Tensor, Tensor]:
    """One block: pre-norm, both branches, summed, MLP, residual."""
    p_norm = ad.layer_norm(P, params[prefix + "ln1.g"], params[prefix + "ln1.b"])
    p_m, r_next = gin_message_pass(p_norm, R, g, params, prefix, cfg)
    p_t = biased_attention(p_norm, R, params, prefix, cfg)
    mixed = ad.layer_norm(ad.add(p_m, p_t), params[prefix + "ln2.g"],
                          params[prefix + "ln2.b"])
    p_next = ad.add(P, _mlp2(mixed, params, prefix + "mlp."))
    return p_next, r_next


class GFSEModel:
    """Parameter container plus the forward pass and task heads."""

    def __init__(self, config: GFSEConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = init_params(config, seed) if params is None else params

    def forward(self, g: Graph, node_feats: np.ndarray,
                rel_feats: np.ndarray) -> Tensor:
        """Encode one graph to its (n, out_dim) output features."""
        cfg = self.config
        n = g.n
        dt = ad.DTYPES[cfg.dtype]
        if node_feats.shape != (n, cfg.walk_steps):
            raise ValueError(f"node features must be ({n}, {cfg.walk_steps}), "
                             f"got {node_feats.shape}")
        if rel_feats.shape != (n, n, cfg.walk_steps):
            raise ValueError(f"relative features must be ({n}, {n}, "
                             f"{cfg.walk_steps}), got {rel_feats.shape}")
        x = Tensor(node_feats.astype(dt))
        r_flat = Tensor(rel_feats.reshape(n * n, cfg.walk_steps).astype(dt))
        p = ad.add(ad.matmul(x, self.params["in_p.W"]), self.params["in_p.b"])
        r = ad.add(ad.matmul(r_flat, self.params["in_r.W"]),
                   self.params["in_r.b"])
        for i in range(cfg.layers):
            p, r = gps_layer(p, r, g, self.params, f"l{i}.", cfg)
        return ad.add(ad.matmul(p, self.params["out.W"]), self.params["out.b"])

    def spd_head(self, pse: Tensor, ii, jj) -> Tensor:
        """Distance predictions for node pairs, shape (len(ii), 1)."""
        x = ad.concat_last([ad.gather_rows(pse, ii), ad.gather_rows(pse, jj)])
        return _mlp2(x, self.params, "head_spd.")

    def motif_head(self, pse: Tensor) -> Tensor:
        return _mlp2(pse, self.params, "head_mc.")

    def cd_embed(self, pse: Tensor) -> Tensor:
        # centered over nodes: raw head outputs share one dominant direction
        # inherited from the walk stats, which pins every cosine near 1
        return ad.center_rows(_mlp2(pse, self.params, "head_cd."))

    def gcl_embed(self, pse: Tensor) -> Tensor:
        """Whole-graph embedding: per-node head output, mean-pooled."""
        return ad.mean_pool_rows(_mlp2(pse, self.params, "head_gcl."))

    def uncertainty(self) -> dict[str, float]:
        """Current per-task variance exp(s)."""
        return {t: math.exp(self.params[f"s.{t}"].item()) for t in TASKS}
