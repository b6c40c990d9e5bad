"""Random-walk structural encodings.

The one-step transition matrix is M = D^-1 A (row-stochastic on graphs with
no isolated node). Node encodings stack the diagonals of I, M, ..., M^(d-1);
relative encodings stack the full (i, j) entries.

Exact mode returns Fractions. Internally exact powers are computed on a
scaled integer matrix: with s = lcm(degrees), s*M is integral, so
M^k = (s*M)^k / s^k with arbitrary-precision ints. Float mode uses float64
matmuls; for the sizes this module accepts the two agree to ~1e-14 relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import Graph, degrees


@dataclass(frozen=True)
class NodePSE:
    """Per-node walk encoding: values[i][k] = (M^k)_{ii}, shape n x d."""
    values: list | np.ndarray
    d: int
    mode: str  # "exact" | "float"


@dataclass(frozen=True)
class RelPSE:
    """Pairwise walk encoding: values[i][j][k] = (M^k)_{ij}, shape n x n x d."""
    values: list | np.ndarray
    d: int
    mode: str


def _check_no_isolated(g: Graph) -> None:
    for v in range(g.n):
        if g.degree(v) == 0:
            raise ValueError(f"node {v} is isolated; walk matrix undefined")


def random_walk_matrix(g: Graph) -> list[list[Fraction]]:
    """Exact M = D^-1 A as a dense Fraction matrix."""
    _check_no_isolated(g)
    n = g.n
    M = [[Fraction(0)] * n for _ in range(n)]
    for u in range(n):
        du = g.degree(u)
        for v in g.neighbors_of(u):
            M[u][v] = Fraction(1, du)
    return M


def integer_walk_powers(g: Graph, d: int) -> tuple[int, list[list[list[int]]]]:
    """Scaled-integer powers: returns (s, T) with (M^k)_{ij} = T[k][i][j] / s^k.

    T[0] is the identity. Exact for any graph without isolated nodes.
    """
    if d < 1:
        raise ValueError(f"encoding dimension must be >= 1, got {d}")
    _check_no_isolated(g)
    n = g.n
    degs = degrees(g)
    s = 1
    for x in degs:
        s = s * x // math.gcd(s, x)
    base = [[0] * n for _ in range(n)]
    for u in range(n):
        w = s // degs[u]
        for v in g.neighbors_of(u):
            base[u][v] = w
    mats = [[[1 if i == j else 0 for j in range(n)] for i in range(n)]]
    cols = list(range(n))
    for _ in range(d - 1):
        prev = mats[-1]
        nxt = [[0] * n for _ in range(n)]
        for i in range(n):
            pi = prev[i]
            row = nxt[i]
            for t in cols:
                p = pi[t]
                if p:
                    bt = base[t]
                    for j in cols:
                        b = bt[j]
                        if b:
                            row[j] += p * b
        mats.append(nxt)
    return s, mats


def _float_powers(g: Graph, d: int) -> np.ndarray:
    _check_no_isolated(g)
    n = g.n
    A = np.zeros((n, n), dtype=np.float64)
    for u, v in g.edges():
        A[u, v] = 1.0
        A[v, u] = 1.0
    M = A / A.sum(axis=1, keepdims=True)
    out = np.empty((d, n, n), dtype=np.float64)
    out[0] = np.eye(n)
    for k in range(1, d):
        out[k] = out[k - 1] @ M
    return out


def node_rw_encoding(g: Graph, d: int, mode: str = "exact") -> NodePSE:
    """Diagonal stack: values[i] = [(M^0)_{ii}, ..., (M^(d-1))_{ii}]."""
    if mode == "exact":
        s, mats = integer_walk_powers(g, d)
        vals = [[Fraction(mats[k][i][i], s ** k) for k in range(d)]
                for i in range(g.n)]
        return NodePSE(vals, d, "exact")
    if mode == "float":
        pw = _float_powers(g, d)
        return NodePSE(np.ascontiguousarray(pw.diagonal(axis1=1, axis2=2).T), d, "float")
    raise ValueError(f"unknown mode {mode!r}")


def relative_rw_encoding(g: Graph, d: int, mode: str = "exact") -> RelPSE:
    """Full stack: values[i][j] = [(M^0)_{ij}, ..., (M^(d-1))_{ij}]."""
    if mode == "exact":
        s, mats = integer_walk_powers(g, d)
        n = g.n
        vals = [[[Fraction(mats[k][i][j], s ** k) for k in range(d)]
                 for j in range(n)] for i in range(n)]
        return RelPSE(vals, d, "exact")
    if mode == "float":
        pw = _float_powers(g, d)
        return RelPSE(np.ascontiguousarray(np.moveaxis(pw, 0, 2)), d, "float")
    raise ValueError(f"unknown mode {mode!r}")


def node_encoding_csv_rows(enc: NodePSE) -> list[str]:
    """CSV rows, one per node: %.12g floats or num/den exact entries."""
    rows = []
    if enc.mode == "exact":
        for row in enc.values:
            rows.append(",".join(f"{f.numerator}/{f.denominator}" for f in row))
    else:
        for row in enc.values:
            rows.append(",".join(f"{x:.12g}" for x in row))
    return rows
