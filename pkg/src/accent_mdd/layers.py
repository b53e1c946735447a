"""Layers built on the autodiff graph.

Every layer registers its parameters in a shared :class:`ParamStore` under a
dotted name prefix and is called with the graph of the current forward pass.
Sequence tensors are batch-major ``[B, S, d]`` with a boolean validity mask
``[B, S]`` for padded positions.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Node, ShapeError, Tensor, concat, exp, layer_norm, stack, take, where

MASK_NEG = -1e30


class ParamStore:
    """Ordered name -> :class:`Tensor` map of trainable parameters."""

    def __init__(self):
        self.tensors: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def n_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def flat(self, names=None) -> np.ndarray:
        names = list(self.tensors) if names is None else names
        return np.concatenate([self.tensors[n].data.ravel() for n in names])

    def set_flat(self, vec, names=None):
        names = list(self.tensors) if names is None else names
        k = 0
        for n in names:
            t = self.tensors[n]
            t.data = np.asarray(vec[k : k + t.data.size], dtype=np.float64).reshape(t.data.shape).copy()
            k += t.data.size

    def flat_grad(self, names=None) -> np.ndarray:
        names = list(self.tensors) if names is None else names
        out = []
        for n in names:
            t = self.tensors[n]
            out.append(np.zeros(t.data.size) if t.grad is None else t.grad.ravel())
        return np.concatenate(out)


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.W = store.add(f"{name}.W", glorot(rng, n_in, n_out))
        self.b = store.add(f"{name}.b", np.zeros(n_out)) if bias else None

    def __call__(self, g: Graph, x: Node) -> Node:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear: input last axis {x.shape[-1]} != {self.n_in}")
        y = x @ g.leaf(self.W)
        return y + g.leaf(self.b) if self.b is not None else y


class Embedding:
    def __init__(self, store: ParamStore, name: str, vocab: int, dim: int, rng: np.random.Generator, scale=1.0):
        if vocab < 1:
            raise ValueError("vocab must be >= 1")
        self.vocab, self.dim = vocab, dim
        self.E = store.add(f"{name}.E", rng.normal(0.0, scale, size=(vocab, dim)))

    def __call__(self, g: Graph, ids) -> Node:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            raise IndexError(f"embedding id out of range [0, {self.vocab})")
        return take(g.leaf(self.E), ids, axis=0)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gain = store.add(f"{name}.gain", np.ones(d))
        self.bias = store.add(f"{name}.bias", np.zeros(d))

    def __call__(self, g: Graph, x: Node) -> Node:
        return layer_norm(x) * g.leaf(self.gain) + g.leaf(self.bias)


class GRUCell:
    """z = σ(xWz + hUz + bz), r = σ(xWr + hUr + br),
    h~ = tanh(xWh + (r⊙h)Uh + bh), h' = (1-z)⊙h + z⊙h~."""

    def __init__(self, store: ParamStore, name: str, n_in: int, hidden: int, rng: np.random.Generator):
        self.n_in, self.hidden = n_in, hidden
        p = {}
        for gate in "zrh":
            p[f"W{gate}"] = store.add(f"{name}.W{gate}", glorot(rng, n_in, hidden))
        for gate in "zrh":
            p[f"U{gate}"] = store.add(f"{name}.U{gate}", glorot(rng, hidden, hidden))
        for gate in "zrh":
            p[f"b{gate}"] = store.add(f"{name}.b{gate}", np.zeros(hidden))
        self.p = p

    def project_inputs(self, g: Graph, x: Node) -> Node:
        """x[..., in] -> [..., 3h] input contributions for (z, r, h~)."""
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"gru: input last axis {x.shape[-1]} != {self.n_in}")
        p = self.p
        W = concat([g.leaf(p["Wz"]), g.leaf(p["Wr"]), g.leaf(p["Wh"])])
        b = concat([g.leaf(p["bz"]), g.leaf(p["br"]), g.leaf(p["bh"])])
        return x @ W + b

    def step(self, g: Graph, xp: Node, h: Node, _Uzr: Node | None = None) -> Node:
        H = self.hidden
        Uzr = _Uzr if _Uzr is not None else concat([g.leaf(self.p["Uz"]), g.leaf(self.p["Ur"])])
        hz = h @ Uzr
        z = (xp[..., :H] + hz[..., :H]).sigmoid()
        r = (xp[..., H : 2 * H] + hz[..., H:]).sigmoid()
        cand = (xp[..., 2 * H :] + (r * h) @ g.leaf(self.p["Uh"])).tanh()
        return h + z * (cand - h)

    def __call__(self, g: Graph, x: Node, h: Node) -> Node:
        return self.step(g, self.project_inputs(g, x), h)


class GRU:
    """Stacked, optionally bidirectional GRU over padded batches."""

    def __init__(self, store, name, n_in, hidden, rng, layers=1, bidirectional=True):
        self.hidden, self.bidirectional = hidden, bidirectional
        self.cells: list[list[GRUCell]] = []
        d = n_in
        for k in range(layers):
            dirs = ["fw", "bw"] if bidirectional else ["fw"]
            self.cells.append([GRUCell(store, f"{name}.l{k}.{dr}", d, hidden, rng) for dr in dirs])
            d = hidden * len(dirs)
        self.out_dim = d

    def __call__(self, g: Graph, x: Node, mask: np.ndarray | None = None) -> Node:
        B, S, _ = x.shape
        if S < 1:
            raise ValueError("gru: empty sequence")
        if mask is None:
            mask = np.ones((B, S), dtype=bool)
        for layer in self.cells:
            outs = [_run_direction(g, cell, x, mask, reverse=(i == 1)) for i, cell in enumerate(layer)]
            x = outs[0] if len(outs) == 1 else concat(outs)
        return x


def _run_direction(g, cell: GRUCell, x: Node, mask: np.ndarray, reverse: bool) -> Node:
    B, S, _ = x.shape
    xp = cell.project_inputs(g, x)
    Uzr = concat([g.leaf(cell.p["Uz"]), g.leaf(cell.p["Ur"])])
    h = g.constant(np.zeros((B, cell.hidden)))
    states = [None] * S
    full = bool(mask.all())
    order = range(S - 1, -1, -1) if reverse else range(S)
    for t in order:
        h_new = cell.step(g, xp[:, t], h, Uzr)
        # padded steps keep the previous state; the reverse pass therefore
        # starts from zeros at each sequence's own last frame
        h = h_new if full else where(mask[:, t : t + 1], h_new, h)
        states[t] = h
    return stack(states, axis=1)


def gru_forward(g: Graph, gru: GRU, x: Node) -> Node:
    """Unbatched convenience: x [S, in] -> [S, h or 2h]."""
    if x.shape[0] < 1:
        raise ValueError("gru: empty sequence")
    out = gru(g, x.reshape(1, *x.shape))
    return out.reshape(*out.shape[1:])


def key_bias(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, MASK_NEG)


class EncoderBlock:
    """Pre-norm transformer block: X + MHSA(LN(X)), then + FF(LN(.))."""

    def __init__(self, store, name, d, n_heads, ff, rng):
        if d % n_heads:
            raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
        self.d, self.n_heads = d, n_heads
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.q = Linear(store, f"{name}.q", d, d, rng)
        self.k = Linear(store, f"{name}.k", d, d, rng, bias=False)  # a key bias cannot change the softmax
        self.v = Linear(store, f"{name}.v", d, d, rng)
        self.o = Linear(store, f"{name}.o", d, d, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ff1 = Linear(store, f"{name}.ff1", d, ff, rng)
        self.ff2 = Linear(store, f"{name}.ff2", ff, d, rng)

    def _heads(self, x: Node) -> Node:
        B, S, _ = x.shape
        return x.reshape(B, S, self.n_heads, self.d // self.n_heads).transpose(0, 2, 1, 3)

    def attend(self, g: Graph, y: Node, mask: np.ndarray | None = None) -> tuple[Node, Node]:
        """Multi-head self-attention on normalized input; returns (output, weights [B, heads, S, S])."""
        B, S, d = y.shape
        q, k, v = self._heads(self.q(g, y)), self._heads(self.k(g, y)), self._heads(self.v(g, y))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // self.n_heads))
        if mask is not None and not mask.all():
            scores = scores + g.constant(key_bias(mask)[:, None, None, :])
        att = scores.softmax()
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, S, d)
        return self.o(g, ctx), att

    def __call__(self, g: Graph, X: Node, mask: np.ndarray | None = None) -> Node:
        d = X.shape[-1]
        if d != self.d:
            raise ShapeError(f"encoder block: model dim {d} != {self.d}")
        X = X + self.attend(g, self.ln1(g, X), mask)[0]
        return X + self.ff2(g, self.ff1(g, self.ln2(g, X)).relu())


@dataclass
class DecoderState:
    q: Node  # [B, d]
    history: list = field(default_factory=list)
    weights: Node | None = None  # previous attention weights [B, S]


def _shift_right(g: Graph, w: Node, j: int) -> Node:
    """out[:, s] = w[:, s - j], zero filled."""
    B, S = w.shape
    if j == 0:
        return w
    if abs(j) >= S:
        return g.constant(np.zeros((B, S)))
    if j > 0:
        return concat([g.constant(np.zeros((B, j))), w[:, : S - j]])
    return concat([w[:, -j:], g.constant(np.zeros((B, -j)))])


class AttentionDecoder:
    """Single GRU cell with location-aware additive attention over encoder states.

    score_s = v . tanh(h_s Wh + b + q Wq + sum_j w_prev[s - j] u_j), so the
    previous step's weights give a position cue.  Output classes are the
    phones ``0..n-1`` plus a boundary class ``n`` (end-of-sequence on output,
    start-of-sequence on input).
    """

    def __init__(self, store, name, n_phones, d, rng, emb_dim=None, att_dim=None, loc_width=3):
        emb_dim = emb_dim or d
        att_dim = att_dim or d
        self.n_phones, self.d = n_phones, d
        self.boundary = n_phones
        self.shifts = list(range(-loc_width, loc_width + 1))
        self.embed = Embedding(store, f"{name}.embed", n_phones + 1, emb_dim, rng, scale=0.3)
        self.att_h = Linear(store, f"{name}.att_h", d, att_dim, rng)
        self.att_q = Linear(store, f"{name}.att_q", d, att_dim, rng, bias=False)
        self.att_loc = store.add(f"{name}.att_loc", glorot(rng, len(self.shifts), att_dim))
        self.att_v = store.add(f"{name}.att_v", glorot(rng, att_dim, 1))
        self.cell = GRUCell(store, f"{name}.cell", emb_dim + d, d, rng)
        self.out = Linear(store, f"{name}.out", 2 * d, n_phones + 1, rng)

    def init_state(self, g: Graph, batch: int, S: int | None = None) -> DecoderState:
        w0 = None
        if S is not None:
            w = np.zeros((batch, S))
            w[:, 0] = 1.0
            w0 = g.constant(w)
        return DecoderState(g.constant(np.zeros((batch, self.d))), [], w0)

    def precompute(self, g: Graph, H: Node) -> Node:
        return self.att_h(g, H)

    def step(self, g: Graph, state: DecoderState, H: Node, y_prev, mask=None, Hproj=None):
        """One decode step for a batch.  Returns (log-probs [B, n+1], new state, weights [B, S])."""
        B, S, d = H.shape
        Hproj = self.precompute(g, H) if Hproj is None else Hproj
        a = Hproj.shape[-1]
        pre = Hproj + self.att_q(g, state.q).reshape(B, 1, a)
        w_prev = state.weights
        if w_prev is None:
            w_prev = self.init_state(g, B, S).weights
        loc = stack([_shift_right(g, w_prev, j) for j in self.shifts], axis=2) @ g.leaf(self.att_loc)
        e = (pre + loc).tanh()
        scores = (e @ g.leaf(self.att_v)).reshape(B, S)
        if mask is not None and not mask.all():
            scores = scores + g.constant(key_bias(mask))
        w = scores.softmax()
        c = (w.reshape(B, 1, S) @ H).reshape(B, d)
        x = concat([self.embed(g, y_prev), c])
        q = self.cell(g, x, state.q)
        logp = self.out(g, concat([q, c])).log_softmax()
        hist = state.history + [np.asarray(y_prev)]
        return logp, DecoderState(q, hist, w), w


def decoder_step(g: Graph, dec: AttentionDecoder, state: DecoderState, H: Node, y_prev: int):
    """Unbatched decoder step: H [S, d] -> (distribution [n+1], state)."""
    if H.shape[0] < 1:
        raise ValueError("decoder_step: empty encoder sequence")
    if state.q.shape != (1, dec.d):
        w = None if state.weights is None else state.weights.reshape(1, H.shape[0])
        state = DecoderState(state.q.reshape(1, dec.d), state.history, w)
    logp, new, w = dec.step(g, state, H.reshape(1, *H.shape), [y_prev])
    return exp(logp.reshape(dec.n_phones + 1)), new


def pad_mask(lengths, S_max) -> np.ndarray:
    return np.arange(S_max)[None, :] < np.asarray(lengths)[:, None]


def masked_mean(g: Graph, x: Node, mask: np.ndarray) -> Node:
    """Mean over axis 1 of x [B, S, k] counting only valid positions."""
    w = mask / mask.sum(axis=1, keepdims=True)
    return (x * g.constant(w[:, :, None])).sum(axis=1)
