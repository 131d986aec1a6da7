"""Exact multi-head attention, random-feature linear attention, and GCN."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as tn
from .tensor import NumericFault, Parameter, Tensor

DENOM_FLOOR = 1e-12


@dataclass
class MhaParams:
    """Per-head query/key/value projections plus the output projection."""
    w_q: list[Parameter]
    w_k: list[Parameter]
    w_v: list[Parameter]
    w_o: Parameter

    @property
    def num_heads(self) -> int:
        return len(self.w_q)

    @property
    def head_dim(self) -> int:
        return self.w_q[0].shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, heads: int = 1,
             name: str = "mha") -> "MhaParams":
        if d_out % heads:
            raise ValueError(f"output dim {d_out} is not divisible by {heads} heads")
        dk = d_out // heads
        mk = lambda tag, h: tn.xavier_uniform(rng, d_in, dk, name=f"{name}.{tag}{h}")
        return cls(
            w_q=[mk("w_q", h) for h in range(heads)],
            w_k=[mk("w_k", h) for h in range(heads)],
            w_v=[mk("w_v", h) for h in range(heads)],
            w_o=tn.xavier_uniform(rng, heads * dk, d_out, name=f"{name}.w_o"),
        )

    def parameters(self) -> list[Parameter]:
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


class KernelFeatureMap:
    """Positive random features for the softmax kernel.

    ``phi(u) = exp(W^T u - |u|^2 / 2) / sqrt(m)`` with Gaussian ``W`` so that
    ``E[phi(a) . phi(b)] = exp(a . b)``. The projection stays fixed until
    :meth:`reseed` is called.
    """

    def __init__(self, dim: int, num_features: int, seed: int = 0):
        self.dim = dim
        self.num_features = num_features
        self.reseed(seed)

    def reseed(self, seed: int) -> None:
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((self.dim, self.num_features))

    def __call__(self, u: Tensor, shift: str = "row") -> Tensor:
        """Apply the map to the rows of ``u``.

        A constant shift (row-wise max for queries, global max for keys) keeps
        ``exp`` in range; it cancels in the attention normalization.
        """
        proj = u @ Tensor(self.projection)
        half_sq = tn.scale(tn.sum_last(tn.square(u)), 0.5)
        logits = tn.add_col(proj, -half_sq)
        if shift == "row":
            c = tn.max_last_const(logits)
        else:
            c = Tensor(np.full(u.shape[:-1] + (1,), logits.data.max()))
        logits = tn.add_col(logits, -c)
        return tn.scale(tn.exp(logits), 1.0 / np.sqrt(self.num_features))


def _heads_out(p: MhaParams, heads: list[Tensor]) -> Tensor:
    cat = heads[0] if len(heads) == 1 else tn.concat(heads, axis=-1)
    return cat @ p.w_o


def exact_attention(x: Tensor, p: MhaParams) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V per head, concatenated and projected by W_O.

    ``x`` is (n, d_in) or batched (B, n, d_in).
    """
    scale = 1.0 / np.sqrt(p.head_dim)
    heads = []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        q, k, v = x @ wq, x @ wk, x @ wv
        scores = tn.scale(q @ tn.transpose(k), scale)
        heads.append(tn.row_softmax(scores) @ v)
    return _heads_out(p, heads)


def linear_attention(x: Tensor, p: MhaParams, fm: KernelFeatureMap) -> Tensor:
    """Kernelized attention phi(Q) (phi(K)^T V) / phi(Q) (phi(K)^T 1).

    Runs in O(n m d_k) time and memory; no n-by-n buffer is formed.
    """
    if x.ndim != 2:
        raise tn.ShapeError(f"linear_attention expects (n, d), got {x.shape}")
    n = x.shape[0]
    root = p.head_dim ** 0.25  # exp(q.k / sqrt(d_k)) = exp(q' . k')
    ones = Tensor(np.ones((n, 1)))
    heads = []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        q = tn.scale(x @ wq, 1.0 / root)
        k = tn.scale(x @ wk, 1.0 / root)
        v = x @ wv
        fq, fk = fm(q, "row"), fm(k, "global")
        fk_t = tn.transpose(fk)
        num = fq @ (fk_t @ v)
        den = fq @ (fk_t @ ones)
        if den.data.min() < DENOM_FLOOR:
            raise NumericFault(f"linear attention denominator {den.data.min():.3g} below {DENOM_FLOOR}")
        heads.append(tn.div_col(num, den))
    return _heads_out(p, heads)


def linear_attention_weights(x: np.ndarray, p: MhaParams, fm: KernelFeatureMap) -> list[np.ndarray]:
    """Materialize the implied n-by-n weights of :func:`linear_attention` (testing aid)."""
    out = []
    with tn.no_grad():
        xt = Tensor(x)
        root = p.head_dim ** 0.25
        for wq, wk in zip(p.w_q, p.w_k):
            fq = fm(tn.scale(xt @ wq, 1.0 / root), "row").data
            fk = fm(tn.scale(xt @ wk, 1.0 / root), "global").data
            a = fq @ fk.T
            out.append(a / a.sum(axis=1, keepdims=True))
    return out


# --- GCN ------------------------------------------------------------------------------

def gcn_normalized_adjacency(n: int, edges) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for an undirected edge list on ``n`` nodes."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    rows = np.r_[e[:, 0], e[:, 1], np.arange(n)]
    cols = np.r_[e[:, 1], e[:, 0], np.arange(n)]
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # duplicate edges collapse
    deg = np.asarray(a.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    return sp.diags(dinv) @ a @ sp.diags(dinv)


@dataclass
class GcnLayer:
    weight: Parameter
    bias: Parameter

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, name: str = "gcn") -> "GcnLayer":
        return cls(tn.xavier_uniform(rng, d_in, d_out, name=f"{name}.weight"),
                   tn.zeros(d_out, name=f"{name}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def gcn_forward(x: Tensor, edges, layers: list[GcnLayer] | GcnLayer, adj=None) -> Tensor:
    """Stacked GCN layers ``A_hat X W + b`` with relu between (not after the last)."""
    if isinstance(layers, GcnLayer):
        layers = [layers]
    n = x.shape[0]
    if adj is None:
        adj = gcn_normalized_adjacency(n, edges)
    h = x
    for i, layer in enumerate(layers):
        h = tn.add(tn.sparse_matmul(adj, h @ layer.weight), layer.bias)
        if i < len(layers) - 1:
            h = tn.relu(h)
    return h
