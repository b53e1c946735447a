"""CTC negative log-likelihood, its gradient, and greedy collapse decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .autodiff import Graph, Node, concat, logsumexp, register_op, stack, take, where

ARPABET_39 = (
    "aa ae ah ao aw ay b ch d dh eh er ey f g hh ih iy jh k l m n ng "
    "ow oy p r s sh t th uh uw v w y z zh"
).split()


@dataclass(frozen=True)
class PhoneInventory:
    """Phones ``0..n-1``, then blank, then end-of-sequence."""

    phones: tuple[str, ...] = tuple(ARPABET_39)

    @property
    def n_phones(self) -> int:
        return len(self.phones)

    @property
    def blank(self) -> int:
        return len(self.phones)

    @property
    def eos(self) -> int:
        return len(self.phones) + 1

    @property
    def size(self) -> int:
        return len(self.phones) + 2

    @classmethod
    def of_size(cls, n: int) -> "PhoneInventory":
        if n <= len(ARPABET_39):
            return cls(tuple(ARPABET_39[:n]))
        return cls(tuple(ARPABET_39) + tuple(f"p{i}" for i in range(len(ARPABET_39), n)))

    def symbol(self, i: int) -> str:
        if i == self.blank:
            return "<blank>"
        if i == self.eos:
            return "<eos>"
        return self.phones[i]


class CtcResult(NamedTuple):
    loss: Node
    feasible: bool


def is_feasible(n_frames: int, labels: Sequence[int]) -> bool:
    return n_frames >= kernels.ctc_min_frames(labels)


def ctc_loss(log_probs: Node, labels: Sequence[int], blank: int) -> CtcResult:
    """-log P_ctc(labels | frames) by differentiating the log-space forward
    recursion through the graph.  ``log_probs`` is [S, V].

    Infeasible pairs return a constant +inf loss with ``feasible=False``.
    """
    g = log_probs.graph
    S = log_probs.shape[0]
    labels = [int(x) for x in labels]
    if not is_feasible(S, labels):
        return CtcResult(g.constant(np.array(np.inf)), False)
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    n = len(ext)
    skip = np.zeros(n, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = take(log_probs, ext, axis=1)  # [S, n]

    init = np.zeros(n, dtype=bool)
    init[: min(2, n)] = True
    neg = g.constant(np.full(n, -np.inf))
    alpha = where(init, emit[0], neg)
    pad1 = g.constant(np.full(1, -np.inf))
    pad2 = g.constant(np.full(2, -np.inf))
    for t in range(1, S):
        paths = [alpha]
        if n > 1:
            paths.append(concat([pad1, alpha[: n - 1]]))
        if n > 2:
            shifted2 = concat([pad2, alpha[: n - 2]])
            paths.append(where(skip, shifted2, neg))
        alpha = logsumexp(stack(paths, axis=0), axis=0) + emit[t]
    final = alpha[n - 1 :] if n == 1 else alpha[n - 2 :]
    return CtcResult(-logsumexp(final, axis=0), True)


def ctc_nll(log_probs: np.ndarray, labels: Sequence[int], blank: int) -> float:
    """Loss value only, through the kernel lattice."""
    return kernels.ctc_nll_grad(log_probs, labels, blank)[0]


# batched fused op: kernel computes alpha/beta and the gradient in one sweep


def _fwd_ctc_batch(vals, labels, lengths, blank):
    lp = vals[0]
    B = lp.shape[0]
    nll = np.empty(B)
    grads = np.zeros_like(lp)
    for b in range(B):
        S = int(lengths[b])
        nll[b], gb = kernels.ctc_nll_grad(lp[b, :S], labels[b], blank)
        grads[b, :S] = gb
    return nll, {"grads": grads}


def _bwd_ctc_batch(g, vals, out, ctx, labels, lengths, blank):
    gg = np.where(np.isfinite(out), g, 0.0)
    return (ctx["grads"] * gg[:, None, None],)


register_op("ctc_batch", _fwd_ctc_batch, _bwd_ctc_batch)


def ctc_loss_batch(log_probs: Node, labels: Sequence[Sequence[int]], lengths: Sequence[int], blank: int) -> Node:
    """Per-utterance CTC losses [B] for padded ``log_probs`` [B, S_max, V]."""
    return log_probs.graph.apply(
        "ctc_batch",
        [log_probs],
        labels=[np.asarray(l, dtype=np.int64) for l in labels],
        lengths=np.asarray(lengths, dtype=np.int64),
        blank=int(blank),
    )


def ctc_greedy_decode(log_probs: np.ndarray, blank: int, drop: Sequence[int] = ()) -> list[int]:
    """Frame argmax (ties to lowest id), collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(log_probs), axis=-1)
    out = []
    prev = None
    for k in best:
        k = int(k)
        if k != prev and k != blank and k not in drop:
            out.append(k)
        prev = k
    return out
