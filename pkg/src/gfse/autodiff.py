"""Dense tensors with a hand-written reverse-mode tape.

numpy arrays provide storage and kernels; every gradient rule, the tape,
and the optimizer live here. Ops record onto the innermost active Tape
(created with `with Tape() as tape:`); outside a tape they run forward-only.
Non-finite op outputs raise immediately. backward() consumes the tape:
calling it twice, or on a non-scalar, or on a tensor from another tape,
is an error.

Supported dtypes are float32 and float64; operands of one op must match.
"""

from __future__ import annotations

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_tape_stack: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(DTYPES[dtype] if isinstance(dtype, str) else dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        # note: ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.array(arr, order="C")
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"


def tensor(data, dtype="f64", requires_grad=False) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


class Tape:
    """Records op applications for one reverse pass."""

    def __init__(self):
        self._records: list[tuple[int, tuple[int, ...], object]] = []
        self._slots: dict[int, int] = {}   # id(tensor) -> slot
        self._tensors: list[Tensor] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        assert _tape_stack.pop() is self
        return False

    def _slot_of(self, t: Tensor) -> int:
        s = self._slots.get(id(t))
        if s is None:
            s = len(self._tensors)
            self._slots[id(t)] = s
            self._tensors.append(t)
        return s

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> None:
        pslots = tuple(self._slot_of(p) for p in parents)
        self._records.append((self._slot_of(out), pslots, backward_fn))

    def backward(self, loss: Tensor) -> "Grads":
        if self._used:
            raise RuntimeError("tape already consumed by a previous backward()")
        self._used = True
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        slot = self._slots.get(id(loss))
        if slot is None:
            raise ValueError("loss tensor was not recorded on this tape")
        grads: list[np.ndarray | None] = [None] * len(self._tensors)
        grads[slot] = np.ones((), dtype=loss.data.dtype)
        for out_slot, pslots, fn in reversed(self._records):
            g = grads[out_slot]
            if g is None:
                continue
            pgrads = fn(g)
            for ps, pg in zip(pslots, pgrads):
                if pg is None:
                    continue
                # accumulation always allocates, so views of g are safe to keep
                grads[ps] = pg if grads[ps] is None else grads[ps] + pg
        by_id = {}
        for t, g in zip(self._tensors, grads):
            if g is not None and t.requires_grad:
                by_id[id(t)] = g
        return Grads(by_id)


class Grads:
    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def get(self, t: Tensor) -> np.ndarray | None:
        return self._by_id.get(id(t))


def _active() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _out(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values in output of op {op!r}")
    t = Tensor(data)
    tape = _active()
    if tape is not None:
        tape.record(t, parents, backward_fn)
    return t


def _same_dtype(op: str, *ts: Tensor) -> None:
    d0 = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d0:
            raise TypeError(f"{op}: mixed dtypes {d0} vs {t.data.dtype}")


# ---------------------------------------------------------------------------
# ops

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a 1-D bias over the last axis."""
    _same_dtype("add", a, b)
    if a.shape != b.shape:
        if b.data.ndim != 1 or a.shape[-1] != b.shape[0]:
            raise ValueError(f"add: shapes {a.shape} and {b.shape}")
        lead = tuple(range(a.data.ndim - 1))

        def bwd(g):
            return g, g.sum(axis=lead)
    else:
        def bwd(g):
            return g, g
    return _out("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("sub", a, b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape}")
    return _out("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _out("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _out("scale", a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    return _out("add_const", a.data + float(c), (a,), lambda g: (g,))


def scalar_mul(s: Tensor, x: Tensor) -> Tensor:
    """0-d tensor times any tensor."""
    _same_dtype("scalar_mul", s, x)
    if s.data.shape != ():
        raise ValueError("scalar_mul: first argument must be 0-d")
    sd, xd = s.data, x.data
    return _out("scalar_mul", sd * xd, (s, x),
                lambda g: (np.asarray((g * xd).sum(), dtype=sd.dtype), g * sd))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    ad, bd = a.data, b.data
    return _out("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _out("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _out("relu", x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _out("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def center_rows(x: Tensor) -> Tensor:
    """Subtract the per-column mean over rows. Self-adjoint projection."""
    if x.data.ndim != 2:
        raise ValueError("center_rows expects a 2-D tensor")
    out = x.data - x.data.mean(axis=0, keepdims=True)
    return _out("center_rows", out, (x,),
                lambda g: (g - g.mean(axis=0, keepdims=True),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _out("exp", out, (x,), lambda g: (g * out,))


def concat_last(parts: list[Tensor]) -> Tensor:
    _same_dtype("concat_last", *parts)
    widths = [p.shape[-1] for p in parts]
    for p in parts[1:]:
        if p.shape[:-1] != parts[0].shape[:-1]:
            raise ValueError("concat_last: leading shapes differ")
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=-1))
    return _out("concat_last", np.concatenate([p.data for p in parts], axis=-1),
                tuple(parts), bwd)


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along rows."""
    _same_dtype("stack_rows", *parts)
    width = parts[0].shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[-1] != width:
            raise ValueError("stack_rows: parts must be 2-D with equal width")
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=0))
    return _out("stack_rows", np.concatenate([p.data for p in parts], axis=0),
                tuple(parts), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return _out("reshape", x.data.reshape(shape).copy(), (x,),
                lambda g: (g.reshape(old),))


def row_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)
    return _out("row_softmax", y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    _same_dtype("layer_norm", x, gamma, beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError("layer_norm: gamma/beta must have last-axis width")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.data.ndim - 1))

    def bwd(g):
        dxhat = g * gamma.data
        dvar = (dxhat * xc * -0.5 * inv ** 3).sum(axis=-1, keepdims=True)
        dmu = (-dxhat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 * xc).mean(
            axis=-1, keepdims=True)
        dx = dxhat * inv + dvar * 2.0 * xc / d + dmu / d
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return _out("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), bwd)


def mean_pool_rows(x: Tensor) -> Tensor:
    """(n, d) -> (1, d) row mean."""
    if x.data.ndim != 2:
        raise ValueError("mean_pool_rows expects 2-D")
    n = x.shape[0]
    return _out("mean_pool_rows", x.data.mean(axis=0, keepdims=True), (x,),
                lambda g: (np.repeat(g, n, axis=0) / n,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    dt = x.data.dtype
    return _out("sum_all", np.asarray(x.data.sum(), dtype=dt), (x,),
                lambda g: (np.broadcast_to(g, shape).astype(dt, copy=True),))


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2:
        raise ValueError("gather_rows expects 2-D source")
    xd = x.data

    def bwd(g):
        out = np.zeros_like(xd)
        np.add.at(out, idx, g)
        return (out,)
    return _out("gather_rows", xd[idx].copy(), (x,), bwd)


def scatter_add_rows(x: Tensor, idx, n_rows: int) -> Tensor:
    """(m, d) rows summed into an (n_rows, d) result at positions idx."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2:
        raise ValueError("scatter_add_rows expects 2-D source")
    out = np.zeros((n_rows, x.shape[1]), dtype=x.data.dtype)
    np.add.at(out, idx, x.data)
    return _out("scatter_add_rows", out, (x,), lambda g: (g[idx].copy(),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("mse", a, b)
    if a.shape != b.shape:
        raise ValueError(f"mse: shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    n = diff.size
    return _out("mse", np.asarray((diff * diff).mean(), dtype=a.data.dtype), (a, b),
                lambda g: (g * 2.0 * diff / n, g * -2.0 * diff / n))


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two (m, d) tensors -> (m,)."""
    _same_dtype("cosine_rows", a, b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise ValueError("cosine_rows expects matching 2-D tensors")
    ad, bd = a.data, b.data
    tiny = 1e-24
    na = np.sqrt((ad * ad).sum(axis=1) + tiny)
    nb = np.sqrt((bd * bd).sum(axis=1) + tiny)
    dot = (ad * bd).sum(axis=1)
    sim = dot / (na * nb)

    def bwd(g):
        gcol = g[:, None]
        da = gcol * (bd / (na * nb)[:, None] - (sim / (na * na))[:, None] * ad)
        db = gcol * (ad / (na * nb)[:, None] - (sim / (nb * nb))[:, None] * bd)
        return da, db
    return _out("cosine_rows", sim, (a, b), bwd)


def log_sum_exp(x: Tensor) -> Tensor:
    """Stable LSE over the last axis: (m, k) -> (m,)."""
    if x.data.ndim != 2:
        raise ValueError("log_sum_exp expects 2-D")
    mx = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - mx)
    s = e.sum(axis=1)
    out = mx[:, 0] + np.log(s)

    def bwd(g):
        return (g[:, None] * (e / s[:, None]),)
    return _out("log_sum_exp", out, (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: Grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            g = g.astype(p.data.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment arrays plus step counter, for checkpointing."""
        out = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        out["opt.t"] = np.asarray([float(self.t)])
        return out

    def load_state(self, named: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = named[f"opt.m.{k}"].copy()
            self.v[k] = named[f"opt.v.{k}"].copy()
        self.t = int(named["opt.t"][0])


# ---------------------------------------------------------------------------
# finite differences

def finite_difference_check(build_loss, params: dict[str, Tensor],
                            eps: float = 1e-5, rel_tol: float = 1e-4,
                            max_coords: int = 6, seed: int = 0) -> dict[str, float]:
    """Compare tape gradients against central differences.

    build_loss(params) must construct the forward pass from scratch and
    return a scalar Tensor. Checks up to max_coords sampled coordinates per
    parameter (all coordinates when the tensor is small). Returns max
    relative error per parameter name; raises AssertionError past rel_tol.
    """
    rng = np.random.default_rng(seed)
    with Tape() as tape:
        loss = build_loss(params)
    grads = tape.backward(loss)
    report: dict[str, float] = {}
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise TypeError("finite differences need float64 parameters")
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        k = flat.size
        coords = (range(k) if k <= max_coords
                  else sorted(rng.choice(k, size=max_coords, replace=False)))
        worst = 0.0
        for c in coords:
            keep = flat[c]
            flat[c] = keep + eps
            hi = float(build_loss(params).data)
            flat[c] = keep - eps
            lo = float(build_loss(params).data)
            flat[c] = keep
            num = (hi - lo) / (2.0 * eps)
            ana = float(g.reshape(-1)[c])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, err)
            if err > rel_tol:
                raise AssertionError(
                    f"gradient mismatch for {name}[{c}]: analytic {ana:.10g} "
                    f"vs numeric {num:.10g} (rel err {err:.3g})")
        report[name] = worst
    return report


def gradient_suite(seed: int = 0, eps: float = 1e-5,
                   rel_tol: float = 1e-4) -> dict[str, float]:
    """Finite-difference coverage of every differentiable op.

    Returns max relative error per checked parameter, keyed "op/param".
    Raises AssertionError on the first violation of rel_tol.
    """
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    def par(shape) -> Tensor:
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def wsum(x: Tensor, w: np.ndarray) -> Tensor:
        return sum_all(mul(x, Tensor(w)))

    def run(tag: str, params: dict[str, Tensor], build) -> None:
        rep = finite_difference_check(build, params, eps=eps, rel_tol=rel_tol,
                                      seed=seed)
        for k, v in rep.items():
            report[f"{tag}/{k}"] = v

    w34 = rng.standard_normal((3, 4))
    run("add", {"a": par((3, 4)), "b": par((3, 4))},
        lambda p: wsum(add(p["a"], p["b"]), w34))
    run("add_bias", {"a": par((3, 4)), "b": par((4,))},
        lambda p: wsum(add(p["a"], p["b"]), w34))
    run("sub", {"a": par((3, 4)), "b": par((3, 4))},
        lambda p: wsum(sub(p["a"], p["b"]), w34))
    run("mul", {"a": par((3, 4)), "b": par((3, 4))},
        lambda p: wsum(mul(p["a"], p["b"]), w34))
    run("scale", {"a": par((3, 4))}, lambda p: wsum(scale(p["a"], -1.7), w34))
    run("add_const", {"a": par((3, 4))},
        lambda p: wsum(add_const(p["a"], 0.3), w34))
    run("scalar_mul", {"s": par(()), "x": par((3, 4))},
        lambda p: wsum(scalar_mul(p["s"], p["x"]), w34))
    w32 = rng.standard_normal((3, 2))
    run("matmul", {"a": par((3, 4)), "b": par((4, 2))},
        lambda p: wsum(matmul(p["a"], p["b"]), w32))
    w43 = rng.standard_normal((4, 3))
    run("transpose", {"a": par((3, 4))},
        lambda p: wsum(transpose(p["a"]), w43))
    # keep relu inputs away from its kink so central differences are valid
    off_zero = (rng.uniform(0.2, 1.0, (3, 4))
                * rng.choice([-1.0, 1.0], (3, 4)))
    run("relu", {"a": Tensor(off_zero, requires_grad=True)},
        lambda p: wsum(relu(p["a"]), w34))
    run("tanh", {"a": par((3, 4))}, lambda p: wsum(tanh(p["a"]), w34))
    w53c = rng.standard_normal((5, 3))
    run("center_rows", {"a": par((5, 3))},
        lambda p: wsum(center_rows(p["a"]), w53c))
    run("exp", {"a": par((3, 4))}, lambda p: wsum(exp(p["a"]), w34))
    w36 = rng.standard_normal((3, 6))
    run("concat_last",
        {"a": par((3, 2)), "b": par((3, 3)), "c": par((3, 1))},
        lambda p: wsum(concat_last([p["a"], p["b"], p["c"]]), w36))
    w26 = rng.standard_normal((2, 6))
    run("reshape", {"a": par((3, 4))},
        lambda p: wsum(reshape(p["a"], (2, 6)), w26))
    w63 = rng.standard_normal((6, 3))
    run("stack_rows", {"a": par((2, 3)), "b": par((1, 3)), "c": par((3, 3))},
        lambda p: wsum(stack_rows([p["a"], p["b"], p["c"]]), w63))
    w35 = rng.standard_normal((3, 5))
    run("row_softmax", {"a": par((3, 5))},
        lambda p: wsum(row_softmax(p["a"]), w35))
    w46 = rng.standard_normal((4, 6))
    run("layer_norm",
        {"x": par((4, 6)), "g": par((6,)), "b": par((6,))},
        lambda p: wsum(layer_norm(p["x"], p["g"], p["b"]), w46))
    w13 = rng.standard_normal((1, 3))
    run("mean_pool_rows", {"a": par((5, 3))},
        lambda p: wsum(mean_pool_rows(p["a"]), w13))
    run("sum_all", {"a": par((3, 4))},
        lambda p: scale(sum_all(p["a"]), 1.3))
    idx_g = np.array([0, 2, 2, 4, 1])
    w53 = rng.standard_normal((5, 3))
    run("gather_rows", {"x": par((5, 3))},
        lambda p: wsum(gather_rows(p["x"], idx_g), w53))
    idx_s = np.array([0, 2, 2, 1])
    wsc = rng.standard_normal((5, 3))
    run("scatter_add_rows", {"x": par((4, 3))},
        lambda p: wsum(scatter_add_rows(p["x"], idx_s, 5), wsc))
    run("mse", {"a": par((3, 4)), "b": par((3, 4))},
        lambda p: mse(p["a"], p["b"]))
    w4 = rng.standard_normal(4)
    run("cosine_rows", {"a": par((4, 3)), "b": par((4, 3))},
        lambda p: wsum(cosine_rows(p["a"], p["b"]), w4))
    w3 = rng.standard_normal(3)
    run("log_sum_exp", {"x": par((3, 5))},
        lambda p: wsum(log_sum_exp(p["x"]), w3))

    tgt = rng.standard_normal((5, 3))
    comp = {"W1": par((4, 6)), "b1": par((6,)), "g": par((6,)),
            "be": par((6,)), "W2": par((6, 3))}
    x_in = rng.standard_normal((5, 4))

    def composite(p):
        h = relu(add(matmul(Tensor(x_in), p["W1"]), p["b1"]))
        h = layer_norm(h, p["g"], p["be"])
        z = row_softmax(matmul(h, p["W2"]))
        return mse(z, Tensor(tgt))
    run("composite", comp, composite)
    return report
