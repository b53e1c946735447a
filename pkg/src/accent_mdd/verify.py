"""Independent oracles and the finite-difference gradient suite.

* CTC: brute-force enumeration of every frame-level path.
* Gradients: central differences over every parameter of tiny instances.
* Alignment and scoring: exhaustive enumeration of alignments for the cost,
  and a memoised recursive DP with an explicit traceback priority for the tally.
"""
from __future__ import annotations

import itertools
import math
import time
from functools import lru_cache
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor, grad_check
from .ctc import ctc_loss, ctc_nll
from .layers import GRU, AttentionDecoder, DecoderState, EncoderBlock, Linear, ParamStore, decoder_step
from .mdd_eval import DELETED, OutcomeCounts, edit_distance, score_utterance
from .corpus import Utterance
from .model import AccentMDD, Batch, ModelConfig, amc_fuse, amg_fuse, classify_accent, hybrid_loss, make_batch, multitask_loss

GRAD_TOL = 1e-4
CTC_TOL = 1e-9


# -- CTC ----------------------------------------------------------------------


def collapse(path, blank: int) -> list[int]:
    out, prev = [], None
    for s in path:
        if s != prev and s != blank:
            out.append(int(s))
        prev = s
    return out


def brute_force_ctc_prob(probs: np.ndarray, labels, blank: int) -> float:
    """Sum of prod_t probs[t, path_t] over every path collapsing to ``labels``."""
    S, V = probs.shape
    labels = list(labels)
    total = 0.0
    for path in itertools.product(range(V), repeat=S):
        if collapse(path, blank) == labels:
            total += math.prod(probs[t, p] for t, p in enumerate(path))
    return total


def random_ctc_instance(rng: np.random.Generator, max_S=6, max_L=3, max_V=4):
    V = int(rng.integers(2, max_V + 1))
    S = int(rng.integers(1, max_S + 1))
    L = int(rng.integers(0, max_L + 1))
    blank = V - 1
    labels = [int(x) for x in rng.integers(0, V - 1, size=L)]
    logits = rng.normal(0.0, 1.5, size=(S, V))
    logp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    return logp, labels, blank


def ctc_oracle_suite(trials=200, seed=0, max_S=6, max_L=3, max_V=4, tol=CTC_TOL) -> dict:
    """Compare exp(-ctc_loss) (graph route and kernel) with the path sum."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_infeasible = 0
    t0 = time.perf_counter()
    for _ in range(trials):
        logp, labels, blank = random_ctc_instance(rng, max_S, max_L, max_V)
        ref = brute_force_ctc_prob(np.exp(logp), labels, blank)
        g = Graph()
        res = ctc_loss(g.constant(logp), labels, blank)
        got = 0.0 if not res.feasible else math.exp(-float(res.loss.value))
        kern = ctc_nll(logp, labels, blank)
        got_k = 0.0 if math.isinf(kern) else math.exp(-kern)
        n_infeasible += not res.feasible
        worst = max(worst, abs(got - ref), abs(got_k - ref))
    return {
        "trials": trials,
        "max_abs_error": worst,
        "infeasible": n_infeasible,
        "seconds": time.perf_counter() - t0,
        "passed": worst <= tol,
    }


# -- gradient suite ------------------------------------------------------------


def store_check(store: ParamStore, build: Callable[[Graph], ad.Node], step=1e-4) -> float:
    """grad_check over every entry of ``store``; ``build(g)`` returns a scalar node."""

    def f(x):
        store.set_flat(x)
        store.zero_grad()
        g = Graph()
        loss = build(g)
        g.backward(loss)
        return float(loss.value), store.flat_grad()

    x0 = store.flat()
    try:
        return grad_check(f, x0, step)
    finally:
        store.set_flat(x0)
        store.zero_grad()


def _proj(g: Graph, y: ad.Node, rng) -> ad.Node:
    """Random fixed linear read-out so every output coordinate matters."""
    return (y * g.constant(rng.normal(size=y.shape))).sum()


def tiny_config(variant="baseline", d=4, **kw) -> ModelConfig:
    base = dict(
        variant=variant, n_phones=3, feat_dim=3, n_accents=2, accent_dim=2, d_model=d, ff_dim=d,
        n_heads=1, n_layers=1, classifier_layers=1, classifier_hidden=2, max_positions=5, seed=3,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(cfg: ModelConfig, rng, B=2, S=5, L=3) -> Batch:
    """Batch with S encoder steps (no subsampling) and length-L targets."""
    utts = []
    for b in range(B):
        T = S - b  # unequal lengths exercise masking
        y = [int(v) for v in rng.integers(cfg.n_phones, size=L - b)]
        utts.append(Utterance(f"u{b}", b % cfg.n_accents, y or [0], y, rng.normal(size=(T, cfg.feat_dim))))
    return make_batch(utts, 1)


def _softmax_rows(rng, shape):
    x = rng.normal(size=shape)
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def component_checks(seed=0) -> dict[str, Callable[[], tuple[float, int]]]:
    """Name -> thunk returning (max relative error, number of parameters checked)."""
    rng = np.random.default_rng(seed)

    def linear():
        st = ParamStore()
        lin = Linear(st, "lin", 4, 3, rng)
        st["lin.b"].data = rng.normal(size=3)
        x = st.add("input", rng.normal(size=(2, 4)))
        R = rng.normal(size=(2, 3))
        return store_check(st, lambda g: (lin(g, g.leaf(x)) * g.constant(R)).sum()), st.n_params()

    def gru():
        st = ParamStore()
        net = GRU(st, "gru", 2, 3, rng, layers=1)
        for n, t in st:
            if ".b" in n:
                t.data = rng.normal(0, 0.3, size=t.data.shape)
        x = st.add("input", rng.normal(size=(2, 4, 2)))
        mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], dtype=bool)
        R = rng.normal(size=(2, 4, 6)) * mask[..., None]
        return store_check(st, lambda g: (net(g, g.leaf(x), mask) * g.constant(R)).sum()), st.n_params()

    def encoder_block():
        st = ParamStore()
        blk = EncoderBlock(st, "blk", 4, 2, 6, rng)
        for n, t in st:
            if n.endswith(".b") or n.endswith(".bias") or n.endswith(".gain"):
                t.data = t.data + rng.normal(0, 0.3, size=t.data.shape)
        x = st.add("input", rng.normal(size=(2, 3, 4)))
        mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=bool)
        R = rng.normal(size=(2, 3, 4)) * mask[..., None]
        return store_check(st, lambda g: (blk(g, g.leaf(x), mask) * g.constant(R)).sum()), st.n_params()

    def dec_step():
        st = ParamStore()
        dec = AttentionDecoder(st, "dec", 3, 3, rng, loc_width=1)
        for n, t in st:
            if n.endswith(".b") or n.endswith(".bz") or n.endswith(".br") or n.endswith(".bh"):
                t.data = rng.normal(0, 0.3, size=t.data.shape)
        H = st.add("input", rng.normal(size=(4, 3)))
        q0 = st.add("state", rng.normal(0, 0.5, size=(1, 3)))
        w0 = _softmax_rows(rng, (1, 4))
        R = rng.normal(size=4)

        def build(g):
            s0 = DecoderState(g.leaf(q0), [], g.constant(w0))
            p, s1 = decoder_step(g, dec, s0, g.leaf(H), 1)
            p2, _ = decoder_step(g, dec, s1, g.leaf(H), 2)
            return (p * g.constant(R)).sum() + (p2 * g.constant(R[::-1].copy())).sum()

        return store_check(st, build), st.n_params()

    def fuse(kind):
        def run():
            st = ParamStore()
            H = st.add("input", rng.normal(size=(2, 3, 4)))
            aE = st.add("accent", rng.normal(size=(2, 2)))
            if kind == "amc":
                W1 = Linear(st, "W1", 6, 4, rng)
                st["W1.b"].data = rng.normal(size=4)
                fn = lambda g: amc_fuse(g.leaf(H), g.leaf(aE), W1)
            else:
                W2 = Linear(st, "W2", 6, 4, rng)
                W3 = Linear(st, "W3", 4, 4, rng)
                st["W2.b"].data = rng.normal(size=4)
                st["W3.b"].data = rng.normal(0, 0.5, size=4)
                fn = lambda g: amg_fuse(g.leaf(H), g.leaf(aE), W2, W3)
            R = rng.normal(size=(2, 3, 4))
            return store_check(st, lambda g: (fn(g) * g.constant(R)).sum()), st.n_params()

        return run

    def classifier():
        model = AccentMDD(tiny_config("amc-s", d=3))
        st = ParamStore()
        keep = [n for n, _ in model.store if n.startswith("accent.")]
        for n in keep:
            st.tensors[n] = model.store[n]
            st[n].data = st[n].data + rng.normal(0, 0.2, size=st[n].data.shape)
        H = st.add("input", rng.normal(size=(2, 4, 3)))
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
        R = rng.normal(size=(2, 2))
        R2 = rng.normal(size=(2, 2))

        def build(g):
            logits, a_soft = classify_accent(g, model, g.leaf(H), mask)
            return (logits * g.constant(R)).sum() + (a_soft * g.constant(R2)).sum()

        return store_check(st, build), st.n_params()

    def ctc():
        st = ParamStore()
        z = st.add("logits", rng.normal(size=(4, 3)))
        labels = [0, 1]
        return store_check(st, lambda g: ctc_loss(g.leaf(z).log_softmax(), labels, 2).loss), st.n_params()

    def _model_check(variant, d, loss_fn):
        model = AccentMDD(tiny_config(variant, d=d))
        for n, t in model.store:
            if np.all(t.data == 0) or n.endswith(".gain"):
                t.data = t.data + rng.normal(0, 0.2, size=t.data.shape)
        batch = tiny_batch(model.config, rng)

        def build(g):
            out = model.forward(g, batch, "train")
            return loss_fn(model, out, batch)

        return store_check(model.store, build), model.store.n_params()

    def hybrid():
        def loss(model, out, batch):
            return hybrid_loss(out, batch.targets, model.config.alpha, model.inventory.blank, model.decoder.boundary)

        return _model_check("baseline", 4, loss)

    def multitask():
        def loss(model, out, batch):
            inv = model.inventory
            h = hybrid_loss(out, batch.targets, model.config.alpha, inv.blank, model.decoder.boundary)
            return multitask_loss(h, out.accent_logits, batch.accents, model.config.beta)

        return _model_check("amg-s", 3, loss)

    return {
        "linear": linear,
        "gru": gru,
        "encoder_block": encoder_block,
        "decoder_step": dec_step,
        "amc_fuse": fuse("amc"),
        "amg_fuse": fuse("amg"),
        "classify_accent": classifier,
        "ctc_loss": ctc,
        "hybrid_loss": hybrid,
        "multitask_loss": multitask,
    }


def gradient_suite(seed=0, tol=GRAD_TOL, progress=None) -> dict:
    results = {}
    for name, thunk in component_checks(seed).items():
        t0 = time.perf_counter()
        err, n = thunk()
        results[name] = {"max_rel_error": err, "n_params": n, "seconds": time.perf_counter() - t0,
                         "passed": err <= tol}
        if progress:
            progress(f"{name:<16} params={n:<4} max rel err {err:.3e}")
    return results


# per-op checks on random inputs (every op the autodiff core exposes)


def _op_cases(rng):
    def r(*s):
        return rng.normal(size=s)

    def pos(*s):
        return rng.uniform(0.5, 2.0, size=s)

    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    k = int(rng.integers(1, 5))
    idx = rng.integers(n, size=3)
    mask = rng.random((n, m)) < 0.5
    return {
        "add": ([r(n, m), r(m)], lambda g, a, b: a + b),
        "sub": ([r(n, m), r(n, 1)], lambda g, a, b: a - b),
        "mul": ([r(n, m), r(n, m)], lambda g, a, b: a * b),
        "scale": ([r(n, m)], lambda g, a: a * 1.7),
        "matmul": ([r(n, k), r(k, m)], lambda g, a, b: a @ b),
        "matmul_batched": ([r(2, n, k), r(k, m)], lambda g, a, b: a @ b),
        "concat": ([r(n, m), r(n, k)], lambda g, a, b: ad.concat([a, b])),
        "stack": ([r(n, m), r(n, m)], lambda g, a, b: ad.stack([a, b], axis=1)),
        "broadcast_to": ([r(1, m)], lambda g, a: ad.broadcast_to(a, (n, m))),
        "sigmoid": ([r(n, m)], lambda g, a: a.sigmoid()),
        "tanh": ([r(n, m)], lambda g, a: a.tanh()),
        "relu": ([r(n, m)], lambda g, a: a.relu()),
        "exp": ([r(n, m)], lambda g, a: ad.exp(a)),
        "log": ([pos(n, m)], lambda g, a: ad.log(a)),
        "softmax": ([r(n, m)], lambda g, a: a.softmax()),
        "log_softmax": ([r(n, m)], lambda g, a: a.log_softmax()),
        "logsumexp": ([r(n, m)], lambda g, a: ad.logsumexp(a, axis=1)),
        "take": ([r(n, m)], lambda g, a: ad.take(a, idx, axis=0)),
        "take_along": ([r(n, m)], lambda g, a: ad.take_along(a, rng_idx(n, m), axis=1)),
        "index": ([r(n, m)], lambda g, a: a[:, ::2]),
        "reshape": ([r(n, m)], lambda g, a: a.reshape(m, n)),
        "transpose": ([r(n, m, k)], lambda g, a: a.transpose(2, 0, 1)),
        "sum": ([r(n, m)], lambda g, a: a.sum(axis=0)),
        "mean": ([r(n, m)], lambda g, a: a.mean(axis=1)),
        "where": ([r(n, m), r(n, m)], lambda g, a, b: ad.where(mask, a, b)),
        "layer_norm": ([r(n, m + 1)], lambda g, a: ad.layer_norm(a)),
    }


def rng_idx(n, m):
    return (np.arange(n * 2).reshape(n, 2) % m)


def op_suite(trials=100, seed=0, step=1e-4) -> dict[str, float]:
    """Max relative FD error per op over ``trials`` random instances."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(trials):
        for name, (inputs, fn) in _op_cases(rng).items():
            tensors = [Tensor(x) for x in inputs]
            sizes = [t.data.size for t in tensors]
            R = None

            def f(vec):
                nonlocal R
                k = 0
                for t, s in zip(tensors, sizes):
                    t.data = vec[k : k + s].reshape(t.data.shape)
                    t.grad = None
                    k += s
                g = Graph()
                y = fn(g, *[g.leaf(t) for t in tensors])
                if R is None:
                    R = rng.normal(size=y.shape)
                loss = (y * g.constant(R)).sum()
                g.backward(loss)
                grad = np.concatenate([np.zeros(s) if t.grad is None else t.grad.ravel()
                                       for t, s in zip(tensors, sizes)])
                return float(loss.value), grad

            x0 = np.concatenate([t.data.ravel() for t in tensors])
            worst[name] = max(worst.get(name, 0.0), grad_check(f, x0, step))
    return worst


# -- alignment and scoring ----------------------------------------------------


def brute_force_edit_distance(src, tgt) -> int:
    """Minimum cost over every alignment, found by exhaustive enumeration."""
    src, tgt = tuple(src), tuple(tgt)

    def walk(i, j, cost, best):
        if cost >= best:
            return best
        if i == len(src) and j == len(tgt):
            return cost
        if i < len(src) and j < len(tgt):
            best = walk(i + 1, j + 1, cost + (src[i] != tgt[j]), best)
        if i < len(src):
            best = walk(i + 1, j, cost + 1, best)
        if j < len(tgt):
            best = walk(i, j + 1, cost + 1, best)
        return best

    return walk(0, 0, 0, len(src) + len(tgt) + 1)


def oracle_realized(canonical, other) -> tuple[list[int], int]:
    """Realized symbol per canonical position using a recursive DP and a
    back-to-front traceback preferring match, substitute, delete, insert."""
    a, b = tuple(canonical), tuple(other)

    @lru_cache(maxsize=None)
    def D(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(D(i - 1, j - 1) + (a[i - 1] != b[j - 1]), D(i - 1, j) + 1, D(i, j - 1) + 1)

    realized = [DELETED] * len(a)
    ins = 0
    i, j = len(a), len(b)
    while i or j:
        if i and j and a[i - 1] == b[j - 1] and D(i, j) == D(i - 1, j - 1):
            realized[i - 1] = b[j - 1]
            i, j = i - 1, j - 1
        elif i and j and D(i, j) == D(i - 1, j - 1) + 1:
            realized[i - 1] = b[j - 1]
            i, j = i - 1, j - 1
        elif i and D(i, j) == D(i - 1, j) + 1:
            realized[i - 1] = DELETED
            i -= 1
        else:
            ins += 1
            j -= 1
    return realized, ins


def oracle_score(canonical, perceived, predicted) -> OutcomeCounts:
    truth, ins_t = oracle_realized(canonical, perceived)
    pred, ins_p = oracle_realized(canonical, predicted)
    c = OutcomeCounts(inserted_truth=ins_t, inserted_pred=ins_p)
    for can, t, p in zip(canonical, truth, pred):
        cell = {(True, True): "TP", (False, True): "FP", (True, False): "FN", (False, False): "TN"}[(t == can, p == can)]
        setattr(c, cell, getattr(c, cell) + 1)
        if cell == "TN":
            if p == t:
                c.CD += 1
            else:
                c.ID += 1
    return c


def scoring_oracle_suite(trials=500, seed=0, max_len=6, n_symbols=4) -> dict:
    rng = np.random.default_rng(seed)
    mismatches = []
    cost_mismatches = 0
    for n in range(trials):
        can = [int(x) for x in rng.integers(n_symbols, size=int(rng.integers(1, max_len + 1)))]
        per = [int(x) for x in rng.integers(n_symbols, size=int(rng.integers(0, max_len + 1)))]
        pre = [int(x) for x in rng.integers(n_symbols, size=int(rng.integers(0, max_len + 1)))]
        for x, y in ((can, per), (can, pre)):
            if edit_distance(x, y) != brute_force_edit_distance(x, y):
                cost_mismatches += 1
        if score_utterance(can, per, pre) != oracle_score(can, per, pre):
            mismatches.append((can, per, pre))
    return {
        "trials": trials,
        "score_mismatches": len(mismatches),
        "cost_mismatches": cost_mismatches,
        "examples": mismatches[:3],
        "passed": not mismatches and cost_mismatches == 0,
    }


__all__ = [
    "brute_force_ctc_prob",
    "brute_force_edit_distance",
    "collapse",
    "ctc_oracle_suite",
    "gradient_suite",
    "op_suite",
    "oracle_score",
    "scoring_oracle_suite",
    "store_check",
    "tiny_batch",
    "tiny_config",
]
